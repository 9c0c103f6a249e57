#!/usr/bin/env python3
"""Cost of composite attestation: messages, latency, and fleet throughput.

Three quick experiments on one machine. Numbers vary with hardware; the
relationships (3 vs 6 messages, composite cheaper than the two-flow sum)
do not.
"""

from ccxtrust import harness

# ---------------------------------------------------------------------------
# message counts over many seeded runs
# ---------------------------------------------------------------------------

result = harness.run_message_count_experiment(5, runs=200)
print(f"message counts over {result.runs} runs "
      f"({result.elapsed_seconds:.2f}s):")
print("   composite  :", dict(result.composite_counts))
print("   independent:", dict(result.independent_counts))

# ---------------------------------------------------------------------------
# wall-clock latency, composite vs the sum of single-technology flows
# ---------------------------------------------------------------------------

latency = harness.run_latency_experiment(5, samples=60, resamples=200)
print()
print(f"latency over {latency.samples} iterations:")
print(f"   composite mean      : {latency.composite_mean * 1e3:7.3f} ms")
print(f"   tee-only mean       : {latency.tee_only_mean * 1e3:7.3f} ms")
print(f"   tpm-only mean       : {latency.tpm_only_mean * 1e3:7.3f} ms")
print(f"   composite cheaper than the sum in "
      f"{latency.fraction_composite_cheaper:.0%} of bootstrap resamples")

# ---------------------------------------------------------------------------
# a small fleet under a thread pool
# ---------------------------------------------------------------------------

bench = harness.run_bench(5, nodes=50, concurrency=8)
print()
print("fleet bench:")
print(bench.table())
