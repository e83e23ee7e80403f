"""Collects one summary line per acceptance criterion."""

RESULTS: list[str] = []


def record(number: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}"
    RESULTS.append(line)
    print(line)
