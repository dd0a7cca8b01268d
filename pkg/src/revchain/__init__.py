"""Iterative code generation with sub-module clustering and self-revision.

The package is organized as small focused modules:

- tasks: benchmark problems, dataset loading, public-test extraction
- prompts: template loading and rendering
- providers: completion/embedding providers (HTTP, replay, local)
- extraction: parsing completions into programs and sub-modules
- execution: sandboxed test execution and public-test filtering
- clustering: embeddings, k-means, centroid selection, schedules
- chain: the per-task generate/filter/cluster/revise loop
- evaluation: pass@k and candidate filtering metrics
- report: report and figure emission
- cli: operator entry point
"""

__version__ = "0.1.0"
