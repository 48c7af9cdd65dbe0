import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from datlab import datagen
from datlab.datagen import Dataset, DataValidationError, DatasetParseError, DomainSpec


def test_zero_transform_domains_share_class_means():
    d = 4
    spec = DomainSpec(0.0, (0.0,) * d, noise_scale=0.5, nonnative_fraction=0.0)
    cfg = datagen.GenConfig(d=d, T=2, N_seen=2, samples_per_domain=4000, seed=3,
                            domains=(spec, spec), unseen=spec)
    train, _, _ = datagen.generate(cfg)
    for t in range(2):
        m0 = train.x[(train.d == 0) & (train.y == t)].mean(axis=0)
        m1 = train.x[(train.d == 1) & (train.y == t)].mean(axis=0)
        np.testing.assert_allclose(m0, m1, atol=0.06)


def test_generate_is_deterministic():
    cfg = datagen.default_config(seed=5, samples_per_domain=50)
    a = [datagen.dumps_dataset(ds) for ds in datagen.generate(cfg)]
    b = [datagen.dumps_dataset(ds) for ds in datagen.generate(cfg)]
    assert a == b


def test_split_sizes_and_unseen_isolation():
    cfg = datagen.default_config(samples_per_domain=100)
    train, seen, unseen = datagen.generate(cfg)
    assert len(train) == 240 and len(seen) == 60 and len(unseen) == 100
    assert set(np.unique(train.d)) == {0, 1, 2} == set(np.unique(seen.d))
    assert set(np.unique(unseen.d)) == {3}


def test_default_raw_probe_separates_domains(default_data):
    _, _, test_seen, _ = default_data
    assert datagen.linear_probe_accuracy(test_seen) > 0.8


def test_default_task_solvable_with_domain_oracle(default_data):
    cfg, _, test_seen, test_unseen = default_data
    assert datagen.oracle_task_error(cfg, test_seen) < 0.15
    assert datagen.oracle_task_error(cfg, test_unseen) < 0.15


def test_nonnative_records_have_larger_variance(default_data):
    _, train, _, _ = default_data
    for j in range(3):
        for t in range(4):
            sel = (train.d == j) & (train.y == t)
            assert train.x[sel & ~train.native].var(axis=0).sum() > train.x[sel & train.native].var(axis=0).sum()


def test_config_validation_names_field():
    cfg = datagen.default_config()
    bad = replace(cfg, domains=(replace(cfg.domains[0], nonnative_fraction=1.5), *cfg.domains[1:]))
    with pytest.raises(DataValidationError, match="nonnative_fraction"):
        bad.validate()
    with pytest.raises(DataValidationError):
        replace(cfg, N_seen=1, domains=cfg.domains[:1]).validate()
    with pytest.raises(DataValidationError):
        replace(cfg, samples_per_domain=5).validate()


def test_config_json_roundtrip():
    cfg = datagen.default_config(seed=9)
    assert datagen.GenConfig.from_dict(json.loads(cfg.to_json())) == cfg


def test_config_missing_field():
    raw = json.loads(datagen.default_config().to_json())
    del raw["T"]
    with pytest.raises(DataValidationError, match="T"):
        datagen.GenConfig.from_dict(raw)


@st.composite
def datasets(draw):
    m = draw(st.integers(1, 12))
    w = draw(st.integers(1, 5))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    soft = None
    if draw(st.booleans()):
        soft = rng.dirichlet(np.ones(3), size=m)
    return Dataset(rng.normal(scale=1e3, size=(m, w)), rng.integers(4, size=m), rng.integers(3, size=m),
                   rng.random(m) < 0.5, soft)


@settings(max_examples=50, deadline=None)
@given(datasets())
def test_jsonl_roundtrip(tmp_path_factory, ds):
    path = tmp_path_factory.mktemp("rt") / "ds.jsonl"
    datagen.write_dataset(ds, path)
    back = datagen.read_dataset(path)
    assert back.equals(ds)
    assert (back.soft is None) == (ds.soft is None)


def test_empty_file_is_parse_error(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    with pytest.raises(DatasetParseError):
        datagen.read_dataset(p)


def test_blank_record_reports_line(tmp_path):
    p = tmp_path / "blank.jsonl"
    p.write_text('{"x": [1.0], "y": 0, "d": 0, "native": true}\n\n')
    with pytest.raises(DatasetParseError, match=":2:"):
        datagen.read_dataset(p)


def test_malformed_line_reports_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"x": [1.0], "y": 0, "d": 0, "native": true}\n{"x": [1.0], "y": 0}\n')
    with pytest.raises(DatasetParseError, match=":2:"):
        datagen.read_dataset(p)


def test_absent_soft_column_is_missing_not_zero(tmp_path):
    p = tmp_path / "nosoft.jsonl"
    p.write_text('{"x": [1.0, 2.0], "y": 1, "d": 0, "native": false}\n')
    ds = datagen.read_dataset(p)
    assert ds.soft is None


def test_mixed_soft_presence_rejected(tmp_path):
    p = tmp_path / "mixed.jsonl"
    p.write_text('{"x": [1.0], "y": 0, "d": 0, "native": true, "soft": [1.0, 0.0]}\n'
                 '{"x": [1.0], "y": 0, "d": 1, "native": true}\n')
    with pytest.raises(DatasetParseError, match=":2:"):
        datagen.read_dataset(p)
