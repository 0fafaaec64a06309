"""Writes the 8-firm INTANFT golden fixture.

Everything here is exact rational arithmetic and hand-checkable; nothing
from the engine is imported.  Two June sorts (2000 and 2001) cover the
holding window 2000-07..2001-12.
"""
import csv
from fractions import Fraction as F

FIRMS = [f"F{i}" for i in range(1, 9)]
# fiscal year -> firm -> (June market cap, INTAN)
SORT_INPUTS = {
    1999: dict(zip(FIRMS, [(10, "0.01"), (20, "0.05"), (30, "0.09"), (40, "0.02"),
                           (50, "0.08"), (60, "0.03"), (70, "0.07"), (80, "0.10")])),
    2000: dict(zip(FIRMS, [(15, "0.10"), (25, "0.01"), (35, "0.02"), (45, "0.05"),
                           (55, "0.03"), (65, "0.08"), (75, "0.09"), (85, "0.07")])),
}
# Sorted INTAN is .01 .02 .03 .05 .07 .08 .09 .10 in both years, so with
# linear interpolation the 30th percentile is .03 + .1*.02 = .032 and the
# 70th is .07 + .9*.01 = .079.  Size medians: 45 (1999) and 50 (2000).
# June 2000 cells: S/L F1 F4, S/M F2, S/H F3, B/L F6, B/M F7, B/H F5 F8.
# June 2001 cells: S/L F2 F3, S/M F4, S/H F1, B/L F5, B/M F8, B/H F6 F7.
MONTHS = [(2000, m) for m in range(7, 13)] + [(2001, m) for m in range(1, 13)]


def firm_return(i, k):
    # firm i (1..8), month number k (1..18)
    return F(i - 4, 100) + F(k * (-1) ** i, 1000)


def percentile(values, q):
    v = sorted(values)
    pos = F(q, 100) * (len(v) - 1)
    lo = int(pos)
    return v[lo] + (pos - lo) * (v[min(lo + 1, len(v) - 1)] - v[lo])


def cells(fy):
    data = {f: (F(me), F(x)) for f, (me, x) in SORT_INPUTS[fy].items()}
    mes = sorted(me for me, _ in data.values())
    median = (mes[3] + mes[4]) / 2
    lo = percentile([x for _, x in data.values()], 30)
    hi = percentile([x for _, x in data.values()], 70)
    out = {}
    for f, (me, x) in data.items():
        size = "S" if me <= median else "B"
        tag = "L" if x <= lo else ("M" if x <= hi else "H")
        out.setdefault(f"{size}/{tag}", []).append((f, me))
    return out


def main():
    with open("derived.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["firm_id", "fiscal_year", "exchange", "market_equity_june", "intan"])
        for fy, rows in SORT_INPUTS.items():
            for f, (me, x) in rows.items():
                w.writerow([f, fy, "NYSE", me, x])
    with open("returns.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["firm_id", "year", "month", "total_return"])
        for i, f in enumerate(FIRMS, start=1):
            for k, (y, m) in enumerate(MONTHS, start=1):
                w.writerow([f, y, m, str(float(firm_return(i, k)))])
    with open("expected_intanft.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["month", "intanft"])
        for k, (y, m) in enumerate(MONTHS, start=1):
            c = cells(1999 if y == 2000 or m < 7 else 2000)
            cell = {}
            for name, members in c.items():
                num = sum(me * firm_return(int(f[1:]), k) for f, me in members)
                cell[name] = num / sum(me for _, me in members)
            v = (cell["S/H"] + cell["B/H"]) / 2 - (cell["S/L"] + cell["B/L"]) / 2
            w.writerow([f"{y:04d}-{m:02d}", f"{float(v):.12f}"])


if __name__ == "__main__":
    main()
