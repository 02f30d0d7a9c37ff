"""Synthetic tasks, toy training, gradient checks, benchmarks and the
MST ablation, plus the invariant self-test that ties them together."""
