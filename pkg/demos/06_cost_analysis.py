"""Multiplication counts of the conv layers (pooling is free) and the
comparisons against the published totals."""
from missmarple.cost import ConvCostSpec, compare, conv_multiplications, format_report, model_cost, table3_comparisons
from missmarple.model import build_mmv, build_mmva

print("first layer of a 64x64x3 valid 3x3 conv, 32 filters:",
      conv_multiplications(ConvCostSpec(n=32, m=3, dk=3, dp=62)))

mmv = build_mmv()
donor = {"V_conv2d_3/kernel": mmv.params["V_conv2d_3/kernel"]}
print(format_report([model_cost(mmv), model_cost(build_mmva(donor_weights=donor))], table3_comparisons()))

diff, pct = compare(11_540_352, 36_507_450)
print(f"{diff:,} fewer multiplications, {pct:.4f}% less work")
