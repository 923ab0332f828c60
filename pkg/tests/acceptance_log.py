"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str, seconds: float) -> str:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail}; {seconds:.2f} s)"
    RESULTS[n] = line
    print(line)
    return line
