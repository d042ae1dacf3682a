import datetime as dt
import io

import pytest

SNAPSHOT_HEADER = "experiment_id,metric_id,day,group,n,mean,stddev\n"
ASSIGNMENT_HEADER = "experiment_id,day,n_control,n_treatment\n"
DAY0 = dt.date(2024, 3, 1)


def day(k):
    return (DAY0 + dt.timedelta(days=k)).isoformat()


def snapshot_csv(rows):
    """``rows``: (experiment, metric, day index, group, n, mean, stddev)."""
    out = io.StringIO()
    out.write(SNAPSHOT_HEADER)
    for exp, metric, k, group, n, mean, sd in rows:
        out.write(f"{exp},{metric},{day(k)},{group},{n},{mean!r},{sd!r}\n")
    return out.getvalue()


def novelty_rows(exp="exp1", metric="m1", days=10, per_day=2000, lift=0.15):
    """Day-one lift that vanishes afterwards; cumulative means dilute it."""
    rows = []
    for k in range(days):
        n = per_day * (k + 1)
        rows.append((exp, metric, k, "control", n, 0.0, 1.0))
        rows.append((exp, metric, k, "treatment", n, lift / (k + 1), 1.0))
    return rows


def null_rows(exp="exp0", metric="m1", days=5, per_day=500):
    rows = []
    for k in range(days):
        n = per_day * (k + 1)
        rows.append((exp, metric, k, "control", n, 1.0, 2.0))
        rows.append((exp, metric, k, "treatment", n, 1.0, 2.0))
    return rows


def assignment_csv(rows):
    out = io.StringIO()
    out.write(ASSIGNMENT_HEADER)
    for exp, k, nc, nt in rows:
        out.write(f"{exp},{day(k)},{nc},{nt}\n")
    return out.getvalue()


def split_rows(exp="srm1", days=7, control=600, treatment=400):
    return [(exp, k, control, treatment) for k in range(days)]


@pytest.fixture
def write_file(tmp_path):
    def write(name, text):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return str(path)
    return write


# One line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
