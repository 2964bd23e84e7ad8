"""Collects one verdict line per acceptance criterion for the terminal summary."""

RESULTS = []


def verdict(name, ok, detail):
    RESULTS.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, f"{name}: {detail}"
