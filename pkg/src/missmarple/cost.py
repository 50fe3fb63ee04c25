"""Multiplication counts of convolution layers and model-to-model comparison.

One conv layer costs ``N * M * Dk^2 * Dp^2`` multiplications: N output
channels, M input channels, a Dk x Dk kernel and a Dp x Dp output map.
Pooling layers contribute nothing; dense layers are not counted.
"""
from __future__ import annotations

from dataclasses import dataclass, field

# published totals used as fixtures for `compare`
TABLE3 = {
    "MissMarple": 11_540_352,
    "patch-CNN baseline": 36_507_450,
    "transfer-learning baseline": 1_296_937_728,
}


@dataclass(frozen=True)
class ConvCostSpec:
    n: int          # output channels
    m: int          # input channels
    dk: int         # kernel side
    dp: int         # output side (square map)
    dp_cols: int | None = None   # output width when the map is not square

    def __post_init__(self):
        for v in (self.n, self.m, self.dk, self.dp, self.dp_cols or 1):
            if int(v) != v or v < 1:
                raise ValueError(f"cost parameters must be positive integers: {self}")


def conv_multiplications(spec):
    cols = spec.dp if spec.dp_cols is None else spec.dp_cols
    return spec.n * spec.m * spec.dk * spec.dk * spec.dp * cols


@dataclass
class LayerCost:
    name: str
    spec: ConvCostSpec
    count: int
    frozen: bool = False


@dataclass
class CostReport:
    model: str
    layers: list = field(default_factory=list)

    @property
    def total(self):
        return sum(l.count for l in self.layers)

    @property
    def frozen_total(self):
        return sum(l.count for l in self.layers if l.frozen)


def model_cost(net):
    """Per-conv-layer counts for a built network (shapes come from its shape check)."""
    report = CostReport(net.name)
    for spec in net.layers:
        if spec.kind != "conv2d":
            continue
        (src,) = net._sources[spec.name]
        m = net.shapes[src][-1]
        ho, wo, n = net.shapes[spec.name]
        cs = ConvCostSpec(n, m, spec.kernel_size, ho, None if ho == wo else wo)
        report.layers.append(LayerCost(spec.name, cs, conv_multiplications(cs), not spec.trainable))
    return report


def compare(ours, theirs):
    """(absolute difference, percent of the larger total saved by the smaller)."""
    if ours <= 0 or theirs <= 0:
        raise ValueError("totals must be positive")
    diff = abs(theirs - ours)
    return diff, 100.0 * diff / max(ours, theirs)


def format_report(reports, comparisons=()):
    """Per-layer lines for each model, totals, then any comparisons.

    ``comparisons`` is a sequence of (label_ours, ours, label_theirs, theirs).
    """
    lines = []
    for rep in reports:
        lines.append(f"[{rep.model}]")
        for l in rep.layers:
            s = l.spec
            dp = f"{s.dp}x{s.dp_cols or s.dp}"
            tag = " (frozen transfer)" if l.frozen else ""
            lines.append(f"  {l.name:<14} N={s.n:<4} M={s.m:<4} Dk={s.dk} Dp={dp:<7} {l.count:>14,d}{tag}")
        if sum(l.count for l in rep.layers) != rep.total:
            raise AssertionError("report total does not match its layer lines")
        lines.append(f"  {'total':<14} {rep.total:>45,d}")
        if rep.frozen_total:
            lines.append(f"  {'without frozen':<14} {rep.total - rep.frozen_total:>45,d}")
    if reports:
        grand = sum(r.total for r in reports)
        lines.append(f"twin total: {grand:,d}")
    for label_a, a, label_b, b in comparisons:
        diff, pct = compare(a, b)
        lines.append(f"{label_a} vs {label_b}: {a} vs {b} -> difference {diff}, {pct:.4f}% faster")
    return "\n".join(lines) + "\n"


def table3_comparisons():
    ours = TABLE3["MissMarple"]
    return [("MissMarple", ours, name, total) for name, total in TABLE3.items() if name != "MissMarple"]
