import numpy as np
import pytest

from gbsg import errors, volio
from gbsg.volio import Cohort, LabelMap, SubjectRecord, Volume3D

from conftest import make_labelmap, make_volume


def test_volume_roundtrip_tiny(tmp_path):
    v = Volume3D(dims=(2, 1, 1), spacing=(1, 1, 1), data=np.array([0.0, 1.0]))
    p = tmp_path / "v.vol"
    volio.write_volume(v, p)
    back = volio.read_volume(p)
    assert back.dims == (2, 1, 1)
    assert np.array_equal(back.data.ravel(), np.array([0.0, 1.0], np.float32))


def test_volume_roundtrip_random(tmp_path):
    rng = np.random.default_rng(1)
    data = rng.normal(size=(5, 4, 3)).astype(np.float32)
    v = make_volume(data, spacing=(0.5, 1.25, 2.0))
    p = tmp_path / "v.vol"
    volio.write_volume(v, p)
    back = volio.read_volume(p)
    assert back.dims == v.dims
    assert back.spacing == pytest.approx(v.spacing)
    assert np.array_equal(back.data, v.data)


def test_magic_mismatch(tmp_path):
    p = tmp_path / "bad.vol"
    p.write_bytes(b"XXXXXXXX" + b"\0" * 64)
    with pytest.raises(errors.MagicMismatch):
        volio.read_volume(p)


def test_truncated_file(tmp_path):
    v = make_volume(np.zeros((4, 4, 4), np.float32))
    p = tmp_path / "v.vol"
    volio.write_volume(v, p)
    raw = p.read_bytes()
    p.write_bytes(raw[: 33 + 32 * 4])  # header promises 64 scalars, keep 32
    with pytest.raises(errors.TruncatedFile):
        volio.read_volume(p)


def test_trailing_bytes_rejected(tmp_path):
    v = make_volume(np.zeros((2, 2, 2), np.float32))
    p = tmp_path / "v.vol"
    volio.write_volume(v, p)
    p.write_bytes(p.read_bytes() + b"\0\0\0\0")
    with pytest.raises(errors.TruncatedFile):
        volio.read_volume(p)


def test_nan_rejected_before_write(tmp_path):
    v = make_volume(np.zeros((2, 2, 2), np.float32))
    v.data[0, 0, 0] = np.nan
    with pytest.raises(errors.NonFiniteData):
        volio.write_volume(v, tmp_path / "v.vol")


def test_nonfinite_payload_rejected_on_read(tmp_path):
    v = make_volume(np.zeros((2, 2, 2), np.float32))
    p = tmp_path / "v.vol"
    volio.write_volume(v, p)
    raw = bytearray(p.read_bytes())
    raw[33:37] = np.array([np.inf], "<f4").tobytes()
    p.write_bytes(bytes(raw))
    with pytest.raises(errors.NonFiniteData):
        volio.read_volume(p)


def test_zero_dims_rejected():
    with pytest.raises(errors.InvalidDims):
        Volume3D(dims=(0, 1, 1), spacing=(1, 1, 1), data=np.zeros(0))


def test_little_endian_layout_is_fixed(tmp_path):
    # byte-level check: header fields and x-fastest payload
    data = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
    v = make_volume(data)
    p = tmp_path / "v.vol"
    volio.write_volume(v, p)
    raw = p.read_bytes()
    assert raw[:8] == b"GBSGVOL1"
    assert np.frombuffer(raw[8:20], "<u4").tolist() == [2, 2, 2]
    assert raw[32] == 0
    assert np.frombuffer(raw[33:], "<f4").tolist() == list(range(8))


def test_labelmap_roundtrip(tmp_path):
    lm = LabelMap(dims=(4, 1, 1), spacing=(1, 1, 1), labels=np.array([0, 1, 1, 2]))
    p = tmp_path / "l.lab"
    volio.write_labelmap(lm, p)
    back = volio.read_labelmap(p)
    assert np.array_equal(back.labels, lm.labels)
    assert back.structure_ids() == [1, 2]


def test_label_overflow():
    with pytest.raises(errors.LabelOverflow):
        LabelMap(dims=(1, 1, 1), spacing=(1, 1, 1), labels=np.array([70000]))


def test_label_overflow_on_write(tmp_path):
    lm = LabelMap(dims=(1, 1, 1), spacing=(1, 1, 1), labels=np.array([1]))
    lm.labels = np.array([[[70000]]], dtype=np.int32)  # mutated after checks
    with pytest.raises(errors.LabelOverflow):
        volio.write_labelmap(lm, tmp_path / "l.lab")


def test_volume_reader_rejects_label_file(tmp_path):
    lm = make_labelmap(np.ones((2, 2, 2), np.uint16))
    p = tmp_path / "l.lab"
    volio.write_labelmap(lm, p)
    with pytest.raises(errors.WrongDtype):
        volio.read_volume(p)


def test_validate_pair_ok():
    v = make_volume(np.zeros((4, 4, 4), np.float32))
    lm = make_labelmap(np.zeros((4, 4, 4), np.uint16))
    volio.validate_pair(v, lm)


def test_validate_pair_dims_mismatch():
    v = make_volume(np.zeros((4, 4, 4), np.float32))
    lm = make_labelmap(np.zeros((5, 4, 4), np.uint16))
    with pytest.raises(errors.DimsMismatch):
        volio.validate_pair(v, lm)


def test_validate_pair_spacing_mismatch():
    v = make_volume(np.zeros((2, 2, 2), np.float32), spacing=(1, 1, 1))
    lm = make_labelmap(np.zeros((2, 2, 2), np.uint16), spacing=(1, 1, 1.1))
    with pytest.raises(errors.SpacingMismatch):
        volio.validate_pair(v, lm)


def test_validate_pair_spacing_tolerance():
    v = make_volume(np.zeros((2, 2, 2), np.float32), spacing=(1, 1, 1))
    lm = make_labelmap(np.zeros((2, 2, 2), np.uint16), spacing=(1, 1, 1 + 5e-7))
    volio.validate_pair(v, lm)  # within 1e-6 relative


def _write_files_for(cohort_dir, sid):
    v = make_volume(np.zeros((2, 2, 2), np.float32))
    lm = make_labelmap(np.zeros((2, 2, 2), np.uint16))
    volio.write_volume(v, cohort_dir / f"{sid}.vol")
    volio.write_labelmap(lm, cohort_dir / f"{sid}.lab")


def _manifest(tmp_path, rows):
    lines = [",".join(volio.MANIFEST_HEADER)]
    lines += [",".join(r) for r in rows]
    p = tmp_path / "manifest.csv"
    p.write_text("\n".join(lines) + "\n")
    return p


def test_manifest_two_rows(tmp_path):
    for sid in ("s1", "s2"):
        _write_files_for(tmp_path, sid)
    p = _manifest(tmp_path, [
        ["s1", "CN", "70", "M", "s1.vol", "s1.lab"],
        ["s2", "AD", "80.5", "F", "s2.vol", "s2.lab"],
    ])
    c = volio.read_manifest(p)
    assert len(c) == 2
    assert c.records[0].group == "CN"
    assert c.records[1].age == 80.5


def test_manifest_duplicate_id(tmp_path):
    _write_files_for(tmp_path, "s1")
    p = _manifest(tmp_path, [
        ["s1", "CN", "70", "M", "s1.vol", "s1.lab"],
        ["s1", "AD", "80", "F", "s1.vol", "s1.lab"],
    ])
    with pytest.raises(errors.DuplicateId):
        volio.read_manifest(p)


def test_manifest_group_case_sensitive(tmp_path):
    _write_files_for(tmp_path, "s1")
    p = _manifest(tmp_path, [["s1", "ad", "70", "M", "s1.vol", "s1.lab"]])
    with pytest.raises(errors.UnknownGroup):
        volio.read_manifest(p)


def test_manifest_header_mismatch(tmp_path):
    p = tmp_path / "manifest.csv"
    p.write_text("id,group,age,sex,volume_path,label_path\n")
    with pytest.raises(errors.HeaderMismatch):
        volio.read_manifest(p)


def test_manifest_bad_age(tmp_path):
    _write_files_for(tmp_path, "s1")
    p = _manifest(tmp_path, [["s1", "CN", "old", "M", "s1.vol", "s1.lab"]])
    with pytest.raises(errors.UnparsableAge):
        volio.read_manifest(p)


def test_manifest_missing_file(tmp_path):
    p = _manifest(tmp_path, [["s1", "CN", "70", "M", "s1.vol", "s1.lab"]])
    with pytest.raises(errors.MissingFile):
        volio.read_manifest(p)


def test_manifest_roundtrip(tmp_path):
    for sid in ("a", "b"):
        _write_files_for(tmp_path, sid)
    c = Cohort(records=[
        SubjectRecord("a", "sMCI", 71.0, "F", str(tmp_path / "a.vol"), str(tmp_path / "a.lab")),
        SubjectRecord("b", "pMCI", 72.0, "M", str(tmp_path / "b.vol"), str(tmp_path / "b.lab")),
    ])
    p = tmp_path / "m.csv"
    volio.write_manifest(c, p)
    back = volio.read_manifest(p)
    assert back.ids() == ["a", "b"]
    assert [r.group for r in back.records] == ["sMCI", "pMCI"]
