"""Benchmark the BM25 scoring kernels: compiled extension vs numpy fallback.

Builds one synthetic posting set shaped like a real index (zipfish document
frequencies, an access mask that drops a share of the corpus), then drives
the same per-term masked_df + bm25_accumulate loop the retrieval engine runs,
once per backend. Scores from both backends must match bit for bit before
any timing is reported.

    python3 benchmarks/bench_kernels.py --docs 100000 --queries 200
"""

import argparse
import sys
import time

import numpy as np

from raftkit._kernels import pure

try:
    from raftkit._kernels import _scorekern
except ImportError:
    _scorekern = None

K1, B = 1.2, 0.75


def make_index(rng, n_docs, n_terms, max_df):
    doc_len = rng.integers(40, 400, size=n_docs).astype(np.float64)
    postings = []
    for t in range(n_terms):
        # a handful of heavy terms, a long tail of rare ones
        df = int(max(1, max_df * (1.0 / (1 + t)) ** 0.7))
        docs = np.sort(rng.choice(n_docs, size=min(df, n_docs), replace=False)).astype(np.int32)
        tf = rng.integers(1, 8, size=docs.size).astype(np.float64)
        postings.append((docs, tf))
    return doc_len, postings


def run_queries(kern, mask_arg, postings, queries, doc_len, mask, n_docs):
    n_auth = int(mask.sum())
    avgdl = float(doc_len[mask].sum()) / n_auth
    out = []
    started = time.perf_counter()
    for terms in queries:
        scores = np.zeros(n_docs, dtype=np.float64)
        for t in terms:
            doc_idx, tf = postings[t]
            df = kern.masked_df(doc_idx, mask_arg)
            if df == 0:
                continue
            idf = np.log(1.0 + (n_auth - df + 0.5) / (df + 0.5))
            kern.bm25_accumulate(doc_idx, tf, float(idf), K1, B, doc_len, avgdl, mask_arg, scores)
        out.append(scores)
    return time.perf_counter() - started, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--docs", type=int, default=100_000)
    ap.add_argument("--terms", type=int, default=2_000)
    ap.add_argument("--max-df", type=int, default=20_000)
    ap.add_argument("--queries", type=int, default=200)
    ap.add_argument("--terms-per-query", type=int, default=6)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    doc_len, postings = make_index(rng, args.docs, args.terms, args.max_df)
    mask = rng.random(args.docs) < 0.7
    queries = [rng.integers(0, args.terms, size=args.terms_per_query) for _ in range(args.queries)]
    n_postings = sum(p[0].size for p in postings)
    print(f"index: {args.docs} docs, {args.terms} terms, {n_postings} postings, "
          f"{int(mask.sum())} authorized; {args.queries} queries x {args.terms_per_query} terms")

    t_pure, scores_pure = run_queries(pure, mask, postings, queries, doc_len, mask, args.docs)
    rows = [("pure", t_pure, 1.0)]

    if _scorekern is None:
        print("compiled kernel not built; timing the fallback only", file=sys.stderr)
    else:
        mask_u8 = mask.view(np.uint8)
        t_comp, scores_comp = run_queries(
            _scorekern, mask_u8, postings, queries, doc_len, mask, args.docs
        )
        for a, b in zip(scores_pure, scores_comp):
            if not np.array_equal(a, b):
                raise SystemExit("backend scores disagree; refusing to report timings")
        rows.append(("compiled", t_comp, t_pure / t_comp))
        print("backends agree bit-for-bit on every query")

    print(f"\n{'backend':<10} {'total s':>9} {'ms/query':>9} {'speedup':>8}")
    for name, total, speedup in rows:
        print(f"{name:<10} {total:>9.3f} {total / args.queries * 1000:>9.3f} {speedup:>7.2f}x")


if __name__ == "__main__":
    main()
