import numpy as np
import pytest

from qmap.forward.dataset import (DatasetError, generate_dataset, pad_signals, read_dataset,
                                  scalars_to_physical, simulate_samples)
from qmap.forward.simulate import SimConfig
from qmap.qmatrix import QmatrixConfig

FAST = SimConfig(n_protons=500)


def test_zero_samples_rejected():
    with pytest.raises(DatasetError):
        generate_dataset("dti", 0, FAST)


def test_byte_identical_rerun(tmp_path):
    q = QmatrixConfig.for_model("dti", q_n=8)
    for name in ("a.bin", "b.bin"):
        generate_dataset("dti", 5, FAST, q, seed=11, path=tmp_path / name)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert (tmp_path / "a.bin.json").read_text() == (tmp_path / "b.bin.json").read_text()


def test_roundtrip(tmp_path):
    q = QmatrixConfig.for_model("noddi", q_n=6)
    ds = generate_dataset("noddi", 3, SimConfig.for_model("noddi", n_protons=300), q, seed=2,
                          path=tmp_path / "d.bin")
    back = read_dataset(tmp_path / "d.bin")
    assert back.model == "noddi" and back.inputs.shape == (3, 6, 6, 9)
    np.testing.assert_array_equal(back.inputs, ds.inputs)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.meta["seed"] == 2


def test_padded_roundtrip(tmp_path):
    from qmap.scheme import GradientScheme
    ds = generate_dataset("dti", 4, FAST, seed=0, scheme=GradientScheme.builtin("dti_b"), pad_to=32,
                          path=tmp_path / "m.bin")
    back = read_dataset(tmp_path / "m.bin")
    assert back.q_n == 0 and back.inputs.shape == (4, 32)
    assert np.all(back.inputs[:, 30:] == 0)


def test_3d_container(tmp_path):
    q = QmatrixConfig.for_model("dti", q_n=5, variant="3d")
    generate_dataset("dti", 2, FAST, q, seed=0, path=tmp_path / "x.bin")
    assert read_dataset(tmp_path / "x.bin").inputs.shape == (2, 5, 5, 5)


def test_fa_labels_bounded():
    s = simulate_samples("dti", 1000, SimConfig(n_protons=50), seed=4)
    assert np.all((s.labels[:, 0] >= 0) & (s.labels[:, 0] <= 1))
    assert np.all(s.labels[:, 1:] >= 0)


def test_labels_match_truth_scalars():
    from qmap.fit.dti import tensor_scalars
    from qmap.forward.truth import sample_dti_truth
    s = simulate_samples("dti", 3, FAST, seed=9, snr_range=None)
    rng = np.random.default_rng(np.random.SeedSequence(9).spawn(3)[0])
    truth, _ = sample_dti_truth(rng)
    expected = tensor_scalars(truth.tensor()).stack()
    np.testing.assert_allclose(scalars_to_physical(s.labels[0], "dti"), expected, rtol=1e-9, atol=1e-12)


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(DatasetError, match="magic"):
        read_dataset(p)


def test_truncated(tmp_path):
    q = QmatrixConfig.for_model("dti", q_n=4)
    generate_dataset("dti", 2, FAST, q, seed=0, path=tmp_path / "t.bin")
    raw = (tmp_path / "t.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-8])
    with pytest.raises(DatasetError, match="payload"):
        read_dataset(tmp_path / "t.bin")


def test_pad_overflow():
    with pytest.raises(DatasetError):
        pad_signals([np.ones(40)], 32)
