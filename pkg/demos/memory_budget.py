"""Inference memory for a small fully connected stack, fp32 LIF vs binary MFP."""

from mfpq.analysis import account_memory

arch = [784, 1024, 1024, 10]
for T in (4, 10, 32):
    lif = account_memory(arch, "fp32-lif", T)
    mfp = account_memory(arch, "mfp-binary", T)
    print(f"T={T:>2}  fp32-lif {lif.total_mb:8.3f} MB   mfp-binary {mfp.total_mb:7.3f} MB   ratio {lif.total_bits / mfp.total_bits:5.1f}x")

print()
print(account_memory(arch, "mfp-binary", 10).to_text())
