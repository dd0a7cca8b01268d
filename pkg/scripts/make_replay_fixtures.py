"""Regenerate the bundled replay fixtures under src/revchain/fixtures/.

The fixtures are a three-task dataset, a recorded completion transcript
covering a twenty-sample, two-revision-round chain per task, and a replay
configuration that runs the whole thing offline.  The first task is tuned so
that exactly 7 of the 20 round-0 candidates pass its public tests, which the
test suite relies on when checking that revision prompts only draw on
public-test survivors.

Run from the repository root:

    python3 scripts/make_replay_fixtures.py
"""

from __future__ import annotations

import shutil
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from revchain.chain import Providers, run_chain
from revchain.cli import build_limits, build_run_config, load_config
from revchain.providers import (
    CompletionBatch,
    LocalHashEmbedder,
    RecordingCompletionProvider,
    SamplingParams,
    TranscriptWriter,
    fingerprint_text,
)
from revchain.tasks import Dataset, Task, TestCase, save_dataset

FIXTURES = REPO / "src" / "revchain" / "fixtures"


class SequenceProvider:
    """Serves one pre-built batch of texts per request, in order."""

    provider_id = "fixture-script"

    def __init__(self, batches: list[list[str]]):
        self.batches = list(batches)
        self.calls = 0

    def complete(self, prompt_text: str, params: SamplingParams) -> CompletionBatch:
        if self.calls >= len(self.batches):
            raise RuntimeError("scripted batches exhausted")
        texts = self.batches[self.calls]
        self.calls += 1
        if len(texts) != params.n:
            raise RuntimeError(f"batch holds {len(texts)} texts, request wants {params.n}")
        return CompletionBatch(
            prompt_fingerprint=fingerprint_text(prompt_text),
            texts=list(texts),
            provider_id=self.provider_id,
        )


def fenced(body: str) -> str:
    return "```python\n" + body.rstrip() + "\n```\n"


def pad_correct(bases: list[str], count: int) -> list[str]:
    """Produce ``count`` correct variants by cycling bases with a noted retry.

    The appended comment keeps repeated picks textually distinct, the way a
    sampled model rarely emits the exact same program twice.
    """
    out = []
    for i in range(count):
        base = bases[i % len(bases)]
        if i < len(bases):
            out.append(fenced(base))
        else:
            out.append(fenced(base + f"\n# resample {i}"))
    return out


PROSE = (
    "I would start by reading the input, then think about the right\n"
    "decomposition before writing any code. The overall idea is clear.\n"
)


# ---------------------------------------------------------------------------
# Task 1: stdio sum over a counted list of lines.

LINE_SUM_TASK = Task(
    id="line-sum",
    description=(
        "The first line holds an integer n. Each of the next n lines holds "
        "one integer. Print the sum of those n integers."
    ),
    difficulty="introductory",
    io_mode="stdio",
    public_tests=(
        # Values chosen so sum, product, and max all disagree.
        TestCase(input="3\n2\n3\n4\n", expected_output="9\n"),
        TestCase(input="2\n5\n6\n", expected_output="11\n"),
    ),
    private_tests=(
        TestCase(input="4\n10\n20\n30\n40\n", expected_output="100\n"),
        TestCase(input="2\n-5\n5\n", expected_output="0\n"),
        TestCase(input="5\n1\n1\n1\n1\n1\n", expected_output="5\n"),
    ),
)

LINE_SUM_CORRECT = [
    '''def read_count(line):
    """Parse how many values follow."""
    return int(line)


def accumulate(values):
    """Add the values together."""
    total = 0
    for v in values:
        total += v
    return total


n = read_count(input())
nums = [int(input()) for _ in range(n)]
print(accumulate(nums))''',
    '''def parse_header(text):
    """Number of lines that follow the header."""
    return int(text.strip())


def total_of(nums):
    """Sum of the parsed integers."""
    return sum(nums)


count = parse_header(input())
values = [int(input()) for _ in range(count)]
print(total_of(values))''',
    '''import sys


def read_values(stream):
    """Read the count line then that many integers."""
    tokens = stream.read().split()
    n = int(tokens[0])
    return [int(x) for x in tokens[1 : n + 1]]


def fold_sum(values):
    """Accumulate with an explicit loop."""
    acc = 0
    for value in values:
        acc += value
    return acc


print(fold_sum(read_values(sys.stdin)))''',
    '''def parse_int(line):
    """Strict integer parse of one line."""
    return int(line)


def running_total(values):
    """Left fold addition over the list."""
    result = 0
    for item in values:
        result = result + item
    return result


n = parse_int(input())
data = [parse_int(input()) for _ in range(n)]
print(running_total(data))''',
]

LINE_SUM_WRONG = [
    # Off-by-one constant.
    fenced('''def read_count(line):
    """Parse the header count."""
    return int(line)


def accumulate(values):
    """Sum, with a stray increment."""
    return sum(values) + 1


n = read_count(input())
print(accumulate([int(input()) for _ in range(n)]))'''),
    # Product instead of sum.
    fenced('''def read_count(line):
    """Parse the header count."""
    return int(line)


def combine(values):
    """Multiply everything together."""
    out = 1
    for v in values:
        out *= v
    return out


n = read_count(input())
print(combine([int(input()) for _ in range(n)]))'''),
    # Maximum instead of sum.
    fenced('''def read_count(line):
    """Parse the header count."""
    return int(line)


def pick(values):
    """Largest value."""
    return max(values)


n = read_count(input())
print(pick([int(input()) for _ in range(n)]))'''),
    # Drops the final value.
    fenced('''def read_count(line):
    """Parse the header count."""
    return int(line)


def partial_sum(values):
    """Sum of all but the last element."""
    return sum(values[:-1])


n = read_count(input())
print(partial_sum([int(input()) for _ in range(n)]))'''),
    # NameError at runtime.
    fenced('''def read_count(line):
    """Parse the header count."""
    return int(line)


n = read_count(input())
print(sum(values))'''),
    # Division by zero inside the helper.
    fenced('''def scale(values):
    """Normalize by a denominator that is accidentally zero."""
    return sum(values) // (len(values) - len(values))


n = int(input())
print(scale([int(input()) for _ in range(n)]))'''),
    # Reads everything, prints nothing.
    fenced('''def read_count(line):
    """Parse the header count."""
    return int(line)


n = read_count(input())
total = sum(int(input()) for _ in range(n))'''),
    # Prose only: no code block at all.
    PROSE,
    # Joins digits as strings.
    fenced('''def glue(values):
    """Concatenate the raw tokens."""
    return "".join(values)


n = int(input())
print(glue([input() for _ in range(n)]))'''),
    # Prints the answer twice.
    fenced('''def total_of(nums):
    """Sum of the numbers."""
    return sum(nums)


n = int(input())
answer = total_of([int(input()) for _ in range(n)])
print(answer)
print(answer)'''),
    # Ignores the count and reads a single value.
    fenced('''def first_value(line):
    """The lone value this solution believes exists."""
    return int(line)


input()
print(first_value(input()))'''),
    # Float arithmetic leaks a trailing .0.
    fenced('''def as_float(line):
    """Parse as float, which mangles the output format."""
    return float(line)


n = int(input())
print(sum(as_float(input()) for _ in range(n)))'''),
    # Reads one line too many.
    fenced('''def read_count(line):
    """Parse the header count."""
    return int(line)


n = read_count(input())
print(sum(int(input()) for _ in range(n + 1)))'''),
]


# ---------------------------------------------------------------------------
# Task 2: call-based best pairwise product.

BEST_PRODUCT_TASK = Task(
    id="best-product",
    description=(
        "Implement best_pair(nums): return the largest product of two "
        "elements taken at distinct positions of the integer list nums "
        "(len(nums) >= 2)."
    ),
    difficulty="interview",
    io_mode="call_based",
    fn_name="best_pair",
    public_tests=(
        TestCase(input="[[1, 5, 3, 9]]", expected_output="45"),
        TestCase(input="[[-10, -3, 2, 4]]", expected_output="30"),
    ),
    private_tests=(
        TestCase(input="[[0, 0]]", expected_output="0"),
        TestCase(input="[[2, 2, 2]]", expected_output="4"),
        TestCase(input="[[-5, 1, 2]]", expected_output="2"),
    ),
)

BEST_PRODUCT_CORRECT = [
    '''def sort_values(nums):
    """Ascending copy of the inputs."""
    return sorted(nums)


def best_pair(nums):
    """Largest product of two distinct positions."""
    s = sort_values(nums)
    return max(s[0] * s[1], s[-1] * s[-2])''',
    '''def all_pairs(nums):
    """Yield products over distinct index pairs."""
    for i in range(len(nums)):
        for j in range(i + 1, len(nums)):
            yield nums[i] * nums[j]


def best_pair(nums):
    """Maximum over every distinct pair."""
    return max(all_pairs(nums))''',
    '''import heapq


def extremes(nums):
    """Two largest and two smallest values."""
    return heapq.nlargest(2, nums), heapq.nsmallest(2, nums)


def best_pair(nums):
    """Best product among the extreme candidates."""
    top, bottom = extremes(nums)
    return max(top[0] * top[1], bottom[0] * bottom[1])''',
]

BEST_PRODUCT_WRONG = [
    # Only considers the two largest, loses on negative pairs.
    fenced('''def top_two(nums):
    """The largest two values."""
    s = sorted(nums)
    return s[-1], s[-2]


def best_pair(nums):
    """Product of the top pair only."""
    a, b = top_two(nums)
    return a * b'''),
    # min * max.
    fenced('''def span(nums):
    """Smallest and largest values."""
    return min(nums), max(nums)


def best_pair(nums):
    """Product of the extremes."""
    lo, hi = span(nums)
    return lo * hi'''),
    # Sum instead of product.
    fenced('''def top_two(nums):
    """The largest two values."""
    s = sorted(nums)
    return s[-1], s[-2]


def best_pair(nums):
    """Adds where it should multiply."""
    a, b = top_two(nums)
    return a + b'''),
    # Returns the sorted list itself.
    fenced('''def best_pair(nums):
    """Returns the wrong type entirely."""
    return sorted(nums)'''),
    # IndexError on short inputs.
    fenced('''def best_pair(nums):
    """Assumes at least six elements."""
    return nums[5] * nums[4]'''),
    # Defines the wrong entry point name.
    fenced('''def solve(nums):
    """Right math, wrong function name."""
    s = sorted(nums)
    return max(s[0] * s[1], s[-1] * s[-2])'''),
    # Absolute values break sign handling.
    fenced('''def magnitudes(nums):
    """Absolute values of the inputs."""
    return sorted(abs(v) for v in nums)


def best_pair(nums):
    """Largest product of magnitudes."""
    s = magnitudes(nums)
    return s[-1] * s[-2]'''),
    # Prose only.
    PROSE,
    # Squares the maximum, reusing one position.
    fenced('''def best_pair(nums):
    """Reuses the same position twice."""
    m = max(nums)
    return m * m'''),
]


# ---------------------------------------------------------------------------
# Task 3: stdio count of even integers in an inclusive range.

EVEN_RANGE_TASK = Task(
    id="even-range",
    description=(
        "One line holds two integers L and R (L <= R). Print how many even "
        "integers lie in the inclusive range [L, R]."
    ),
    difficulty="competition",
    io_mode="stdio",
    public_tests=(
        TestCase(input="2 10\n", expected_output="5\n"),
        TestCase(input="1 1\n", expected_output="0\n"),
    ),
    private_tests=(
        TestCase(input="3 7\n", expected_output="2\n"),
        TestCase(input="10 10\n", expected_output="1\n"),
        TestCase(input="1 1000000\n", expected_output="500000\n"),
    ),
)

EVEN_RANGE_CORRECT = [
    '''def parse_pair(line):
    """Two integers on one line."""
    a, b = line.split()
    return int(a), int(b)


def even_count(lo, hi):
    """Evens in the inclusive range via prefix counts."""
    return hi // 2 - (lo - 1) // 2


lo, hi = parse_pair(input())
print(even_count(lo, hi))''',
    '''def bounds(text):
    """Parse the inclusive endpoints."""
    parts = text.split()
    return int(parts[0]), int(parts[1])


def count_even(lo, hi):
    """Count from the first even value in range."""
    first = lo if lo % 2 == 0 else lo + 1
    if first > hi:
        return 0
    return (hi - first) // 2 + 1


a, b = bounds(input())
print(count_even(a, b))''',
    '''def read_range(line):
    """Endpoints as integers."""
    a, b = line.split()
    return int(a), int(b)


def tally_evens(lo, hi):
    """Walk the range and count the evens."""
    count = 0
    for value in range(lo, hi + 1):
        if value % 2 == 0:
            count += 1
    return count


lo, hi = read_range(input())
print(tally_evens(lo, hi))''',
]

EVEN_RANGE_WRONG = [
    # Midpoint-ish guess.
    fenced('''def parse_pair(line):
    """Two integers on one line."""
    a, b = line.split()
    return int(a), int(b)


def even_count(lo, hi):
    """Half the width, which drops endpoints."""
    return (hi - lo) // 2


lo, hi = parse_pair(input())
print(even_count(lo, hi))'''),
    # Counts odds instead.
    fenced('''def parse_pair(line):
    """Two integers on one line."""
    a, b = line.split()
    return int(a), int(b)


def odd_count(lo, hi):
    """Counts the odd values by mistake."""
    return sum(1 for v in range(lo, hi + 1) if v % 2 == 1)


lo, hi = parse_pair(input())
print(odd_count(lo, hi))'''),
    # Off-by-one prefix formula.
    fenced('''def parse_pair(line):
    """Two integers on one line."""
    a, b = line.split()
    return int(a), int(b)


def even_count(lo, hi):
    """Prefix difference missing the lower adjustment."""
    return hi // 2 - lo // 2


lo, hi = parse_pair(input())
print(even_count(lo, hi))'''),
    # Splits on a comma that is not there.
    fenced('''def parse_pair(line):
    """Expects comma separation and crashes on spaces."""
    a, b = line.split(",")
    return int(a), int(b)


lo, hi = parse_pair(input())
print(hi // 2 - (lo - 1) // 2)'''),
    # Prints a label next to the number.
    fenced('''def parse_pair(line):
    """Two integers on one line."""
    a, b = line.split()
    return int(a), int(b)


lo, hi = parse_pair(input())
print("count:", hi // 2 - (lo - 1) // 2)'''),
    # Prose only.
    PROSE,
    # Exclusive upper bound.
    fenced('''def parse_pair(line):
    """Two integers on one line."""
    a, b = line.split()
    return int(a), int(b)


def even_count(lo, hi):
    """Treats the range as half open."""
    return sum(1 for v in range(lo, hi) if v % 2 == 0)


lo, hi = parse_pair(input())
print(even_count(lo, hi))'''),
]


def build_batches(correct: list[str], wrong: list[str], plan: list[int]) -> list[list[str]]:
    """One batch per round: ``plan[r]`` correct texts, the rest wrong.

    Correct and wrong picks interleave so passing candidates land on a
    spread of sample indices rather than a prefix block.
    """
    batches = []
    for round_index, n_correct in enumerate(plan):
        good = pad_correct(correct, n_correct)
        bad = []
        for i in range(20 - n_correct):
            text = wrong[i % len(wrong)]
            if i >= len(wrong):
                text = text.rstrip() + f"\n# retry {round_index}.{i}\n"
            bad.append(text)
        batch = []
        gi = bi = 0
        for slot in range(20):
            take_good = gi < len(good) and (slot % 3 != 1 or bi >= len(bad))
            if take_good:
                batch.append(good[gi])
                gi += 1
            else:
                batch.append(bad[bi])
                bi += 1
        batches.append(batch)
    return batches


REPLAY_CONFIG = """\
# Offline replay of the bundled three-task demonstration run.
dataset: mini_dataset
run:
  samples_per_round: 20
  max_rounds: 2
  seed: 2026
  revision_feedback: C-M
  schedule:
    scheme: decreasing
    base_k: 5
  sampling:
    temperature: 0.6
    max_tokens: 2048
provider:
  kind: replay
  transcript: transcripts/completions.jsonl
embedding:
  kind: local
  dim: 64
execution:
  wall_timeout_s: 5.0
  jobs: 4
"""


def main() -> int:
    dataset = Dataset(
        name="mini",
        split="demo",
        tasks=(LINE_SUM_TASK, BEST_PRODUCT_TASK, EVEN_RANGE_TASK),
    )
    dataset_dir = FIXTURES / "mini_dataset"
    if dataset_dir.exists():
        shutil.rmtree(dataset_dir)
    save_dataset(dataset, dataset_dir)

    config_path = FIXTURES / "replay_config.yaml"
    config_path.write_text(REPLAY_CONFIG, encoding="utf-8")
    config = load_config(config_path)
    run_config = build_run_config(config)
    limits = build_limits(config)
    embedder = LocalHashEmbedder(dim=int(config["embedding"]["dim"]))

    transcript_path = FIXTURES / "transcripts" / "completions.jsonl"
    transcript_path.parent.mkdir(parents=True, exist_ok=True)
    if transcript_path.exists():
        transcript_path.unlink()
    writer = TranscriptWriter(transcript_path)

    # Exactly 7/20 round-0 passers on line-sum; the other tasks just need
    # healthy, varied pools.
    scripts = {
        "line-sum": build_batches(LINE_SUM_CORRECT, LINE_SUM_WRONG, [7, 12, 15]),
        "best-product": build_batches(BEST_PRODUCT_CORRECT, BEST_PRODUCT_WRONG, [9, 13, 16]),
        "even-range": build_batches(EVEN_RANGE_CORRECT, EVEN_RANGE_WRONG, [8, 12, 14]),
    }

    for task in dataset.tasks:
        provider = RecordingCompletionProvider(SequenceProvider(scripts[task.id]), writer)
        chain = run_chain(
            task,
            run_config,
            Providers(completion=provider, embedding=embedder),
            limits=limits,
            runner="double",
            jobs=4,
        )
        # Round r's record carries the survivor ids filtered from round r-1,
        # so round 0's pass count lives on the round 1 record.
        round1 = chain.rounds[1]
        passers = len(round1.filtered_ids) if not round1.filter_fallback else 0
        print(f"{task.id}: rounds={len(chain.rounds)} round0_passers={passers}")
        if task.id == "line-sum" and passers != 7:
            raise SystemExit(f"line-sum round 0 has {passers} passers, expected 7")
        if len(chain.rounds) != run_config.max_rounds + 1:
            raise SystemExit(f"{task.id}: expected {run_config.max_rounds + 1} rounds")
        for record in chain.rounds[1:]:
            if record.degenerate:
                raise SystemExit(f"{task.id}: round {record.round_index} degenerated")

    records = transcript_path.read_text(encoding="utf-8").strip().splitlines()
    expected = len(dataset.tasks) * (run_config.max_rounds + 1)
    if len(records) != expected:
        raise SystemExit(f"transcript has {len(records)} records, expected {expected}")
    print(f"wrote {transcript_path} ({len(records)} records)")
    print(f"wrote {dataset_dir}")
    print(f"wrote {config_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
