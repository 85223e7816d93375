"""Collects one status line per acceptance criterion for the terminal summary."""

LINES: list[str] = []


def record(number: int, title: str, status: str, detail: str = "") -> str:
    line = f"criterion {number} [{status}] {title}" + (f": {detail}" if detail else "")
    LINES.append(line)
    print(line)
    return line
