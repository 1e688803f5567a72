import pytest

from gbsg import errors
from gbsg.config import parse_config


GOOD = """\
# cohort
paths.manifest = data/manifest.csv
paths.workdir = work
grading.k = 20          # neighbors
grading.method = patchmatch
graph.sigma_mode = fixed
graph.sigma = 0.5
featsel.target_nonzeros = 25
classify.kind = svm
pipeline.seed = 99
synth.affected = 1;3
"""


def test_parse_good_config(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text(GOOD)
    cfg = parse_config(p)
    assert cfg.get("grading.k") == 20
    assert cfg.get("grading.method") == "patchmatch"
    assert cfg.get("pipeline.seed") == 99
    assert cfg.get("synth.affected") == [1, 3]
    assert cfg.get("classify.rf_trees") == 500  # default fills in
    gp = cfg.grading_params()
    assert gp.k == 20 and gp.method == "patchmatch" and gp.seed == 99
    assert cfg.graph_params().sigma == 0.5
    assert cfg.enet_params().target_nonzeros == 25
    # relative paths resolve against the config location
    assert cfg.workdir == str(tmp_path / "work")
    assert cfg.manifest_path == str(tmp_path / "data" / "manifest.csv")


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text("grading.kk = 5\n")
    with pytest.raises(errors.ConfigError):
        parse_config(p)


def test_bad_value_rejected(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text("grading.k = soon\n")
    with pytest.raises(errors.ConfigError):
        parse_config(p)


def test_bad_choice_rejected(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text("grading.method = fast\n")
    with pytest.raises(errors.ConfigError):
        parse_config(p)


def test_duplicate_key_rejected(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text("grading.k = 5\ngrading.k = 6\n")
    with pytest.raises(errors.ConfigError):
        parse_config(p)


def test_garbage_line_rejected(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text("grading.k\n")
    with pytest.raises(errors.ConfigError):
        parse_config(p)


def test_missing_required_key(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text("grading.k = 5\n")
    cfg = parse_config(p)
    with pytest.raises(errors.ConfigError):
        cfg.workdir


def test_resolved_items_cover_schema(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text(GOOD)
    cfg = parse_config(p)
    items = dict(cfg.resolved_items())
    assert items["grading.k"] == "20"
    assert items["classify.rf_trees"] == "500"
    assert items["synth.affected"] == "1;3"
    assert "paths.workdir" in items


def test_synth_spec_materialization(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text("paths.workdir = w\nsynth.dim = 16\nsynth.structures = 4\n"
                 "synth.severity_smci = 0.2\nsynth.severity_pmci = 0.3\n"
                 "synth.severity_ad = 0.4\nsynth.count_cn = 2\n")
    spec = parse_config(p).synth_spec()
    assert spec.dims == (16, 16, 16)
    assert spec.n_structures == 4
    assert set(spec.perturbation) == {1, 3}  # odd ids by default
    assert spec.perturbation[1]["pMCI"] == 0.3
    assert spec.counts["CN"] == 2
