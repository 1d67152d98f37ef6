import json
import logging

import pytest

from config import FilterConfig, OracleConfig, load_filter_config
from data_model import write_table
from embedding_store import write_embeddings
from engine import FilterResult, Provenance, write_result
from errors import ConfigError, VoteError
from file_utils import content_hash, get_artifact_path, should_process_file, write_json
from log_utils import configure_logging


def test_defaults_validate():
    cfg = FilterConfig().validate()
    assert (cfg.k, cfg.xi, cfg.min_sample, cfg.max_depth) == (4, 0.005, 101, 3)
    assert cfg.thresholds.ub == pytest.approx(0.85)


def test_load_config_with_flat_keys(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"k": 6, "lb": 0.1, "lambda": 0.4, "strategy": "sim"}))

    cfg = load_filter_config(str(path))

    assert cfg.k == 6
    assert cfg.thresholds.lb == 0.1
    assert cfg.thresholds.ub == pytest.approx(0.9)
    assert cfg.distance.lam == 0.4
    assert cfg.strategy == "sim"


def test_config_dict_round_trip():
    cfg = FilterConfig(k=7, xi=0.02, seed=5, recluster=False)
    assert FilterConfig.from_dict(cfg.to_dict()) == cfg


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError):
        FilterConfig.from_dict({"kk": 3})


@pytest.mark.parametrize(
    "changes",
    [{"k": 0}, {"xi": 0.0}, {"xi": 1.5}, {"min_sample": 0}, {"max_depth": -1}, {"strategy": "max"}],
)
def test_invalid_values(changes):
    cfg = FilterConfig(**changes)
    with pytest.raises(ConfigError):
        cfg.validate()


def test_bad_thresholds():
    with pytest.raises(VoteError):
        FilterConfig.from_dict({"lb": 0.5, "ub": 0.5})


def test_missing_and_malformed_config(tmp_path):
    with pytest.raises(ConfigError):
        load_filter_config(str(tmp_path / "nope.json"))
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_filter_config(str(path))


def test_oracle_config_from_env(monkeypatch):
    monkeypatch.setenv("SEMFILTER_ORACLE_BASE_URL", "http://localhost:8000")
    monkeypatch.setenv("SEMFILTER_ORACLE_MODEL", "local-model")

    cfg = OracleConfig.from_env(parallelism=2, model=None)

    assert cfg.base_url == "http://localhost:8000"
    assert cfg.model == "local-model"
    assert cfg.parallelism == 2
    assert cfg.temperature == 0.7


def test_content_hash_matches_git(tmp_path):
    path = tmp_path / "hello.txt"
    path.write_bytes(b"hello\n")
    assert content_hash(str(path)) == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_artifact_paths_and_skip_rules(tmp_path):
    assert get_artifact_path("runs/result.jsonl", "manifest") == "runs/result.manifest.json"
    with pytest.raises(ValueError):
        get_artifact_path("runs/result.jsonl", "nope")

    path = tmp_path / "out.json"
    assert should_process_file(str(path))
    path.write_text("")
    assert should_process_file(str(path))
    write_json(str(path), {"b": 1, "a": 2})
    assert not should_process_file(str(path))
    assert should_process_file(str(path), force=True)
    assert path.read_text() == '{\n  "a": 2,\n  "b": 1\n}\n'


def test_json_logging(capsys):
    configure_logging("INFO", json_logs=True)
    logging.getLogger("semfilter.test").info("✅ done", extra={"records": 3})

    line = capsys.readouterr().err.strip().splitlines()[-1]
    record = json.loads(line)
    assert record["message"] == "✅ done"
    assert record["levelname"] == "INFO"
    assert record["records"] == 3


def test_writers_create_parent_directories(tmp_path, reviews_table, random_embeddings):
    table_path = tmp_path / "a" / "b" / "table.jsonl"
    emb_path = tmp_path / "c" / "table.emb"
    result_path = tmp_path / "d" / "e" / "result.jsonl"

    write_table(reviews_table, str(table_path))
    write_embeddings(random_embeddings(reviews_table.ids(), dim=3), str(emb_path))
    write_result(FilterResult(labels={0: True}, provenance={0: Provenance.ORACLE}), str(result_path))

    assert table_path.exists() and emb_path.exists() and result_path.exists()
