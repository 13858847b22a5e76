import pandas as pd
import pytest

from app.cli import EXIT_INGESTION, EXIT_NUMERIC, EXIT_USAGE, exit_code, main
from app.core.errors import IngestionError, NumericError, OptimizationError, UsageError

SHORT_INI = """
[experiment]
name = cli-short

[dataset]
name = rlc
n_samples = 401
train_end = 150
validation_start = 100
validation_end = 150
test_start = 150
test_end = 400

[algorithm]
nu1 = 0.01
regularizer = 0
max_size = 40

[topology]
depth = 2

[output]
write_files = true
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "short.ini"
    path.write_text(SHORT_INI)
    return path


@pytest.mark.parametrize(
    "exc, code",
    [
        (UsageError("x"), EXIT_USAGE),
        (IngestionError("x"), EXIT_INGESTION),
        (NumericError("x"), EXIT_NUMERIC),
        (OptimizationError("x"), EXIT_NUMERIC),
    ],
)
def test_exit_codes(exc, code):
    assert exit_code(exc) == code


def test_generate(tmp_path, capsys):
    assert main(["generate", "--dataset", "rlc", "--n-samples", "50", "--out", str(tmp_path), "--format", "tsv"]) == 0
    frame = pd.read_csv(tmp_path / "rlc.tsv", sep="\t", float_precision="round_trip")
    assert len(frame) == 50
    assert "rlc: 50 samples" in capsys.readouterr().out


def test_run(config_file, tmp_path, capsys):
    assert main(["run", "--config", str(config_file), "--out", str(tmp_path), "--seed", "4"]) == 0
    report = pd.read_csv(tmp_path / "cli-short" / "report.csv", float_precision="round_trip")
    assert report["depth"].tolist() == [1, 2]
    assert "monitored" in capsys.readouterr().out


def test_missing_config(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "absent.ini")]) == EXIT_USAGE
    assert "invalid_config" in capsys.readouterr().err


def test_sweep(config_file, tmp_path):
    code = main(["sweep", "--config", str(config_file), "--out", str(tmp_path),
                 "--grid", "algorithm.nu1=0.01,0.05", "--workers", "1"])
    assert code == 0
    frame = pd.read_csv(tmp_path / "cli-short" / "sweep.csv", float_precision="round_trip")
    assert len(frame) == 2


def test_usage_error_from_parser():
    with pytest.raises(SystemExit) as info:
        main(["generate", "--dataset", "henon"])
    assert info.value.code == 2
