import os

# keep the numerics single-threaded: tiny matmuls gain nothing from BLAS
# threads and bit-exact reproducibility of training traces is a contract
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

# one summary line per acceptance criterion, printed after the test report
# so the verdicts and their measured values are visible in a single block
CRITERION_LINES: list[tuple[str, bool, str]] = []


def record_criterion(name: str, passed: bool, detail: str) -> None:
    CRITERION_LINES.append((name, bool(passed), detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in CRITERION_LINES:
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}: {detail}")
