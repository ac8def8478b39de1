"""Command-line front end.

Subcommands: split (carve a treebank into train/test/dev), train (fit a
probe), eval (decode and score a section), compare (paired permutation
test between two eval outputs), gradcheck (finite-difference audit of
the analytic gradients), synth (generate a random-tree treebank plus a
matching synthetic embedding store).

Exit codes: 0 success, 1 internal numeric failure (divergence, negative
radicand), 2 input or usage error. KPROBE_THREADS caps the worker count
used for within-batch gradient accumulation.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import random
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__, decode_eval, embeddings, kernels, probe, treebank


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _threads() -> int:
    raw = os.environ.get("KPROBE_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"KPROBE_THREADS must be an integer, got {raw!r}")
    return max(1, value)


def _read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except FileNotFoundError:
        raise ValueError(f"no such file: {path}")


def _read_treebank(path: str) -> list:
    return treebank.parse_conllu(_read_text(path))


def _read_store(path: str) -> embeddings.EmbeddingStore:
    try:
        with open(path, "rb") as fh:
            return embeddings.read_store(fh)
    except FileNotFoundError:
        raise ValueError(f"no such file: {path}")


def _read_split(path: str) -> treebank.SplitSpec:
    return treebank.SplitSpec.from_json(_read_text(path))


def _section_items(
    sentences: list,
    store: embeddings.EmbeddingStore,
    split: treebank.SplitSpec,
    section: str,
) -> list:
    """(Sentence, float64 matrix) pairs for one split section, split order."""
    by_id = {s.id: s for s in sentences}
    recs = store.by_id()
    items = []
    for sid in split.section(section):
        if sid not in by_id:
            raise ValueError(f"split names sentence {sid!r} not in treebank")
        if sid not in recs:
            raise ValueError(f"split names sentence {sid!r} not in store")
        sent = by_id[sid]
        rec = recs[sid]
        if rec.matrix.shape[0] != len(sent):
            raise ValueError(
                f"sentence {sid!r}: {rec.matrix.shape[0]} embedding rows "
                f"for {len(sent)} tokens"
            )
        items.append((sent, rec.matrix.astype(np.float64)))
    return items


def _write_manifest(out_dir: str, command: str, args: dict, started: str,
                    outputs: list) -> None:
    doc = {
        "command": command,
        "args": args,
        "package_version": __version__,
        "started": started,
        "finished": _now(),
        "outputs": outputs,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_split(args: argparse.Namespace) -> int:
    sentences = _read_treebank(args.treebank)
    spec = treebank.make_splits(sentences, cap=args.cap, seed=args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(spec.to_json())
        fh.write("\n")
    print(
        f"split {len(spec.train)}/{len(spec.test)}/{len(spec.dev)} "
        f"(train/test/dev) -> {args.out}"
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    started = _now()
    config = probe.load_config(args.config)
    if args.optimizer:
        config = dataclasses.replace(config, optimizer=args.optimizer)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    sentences = _read_treebank(args.treebank)
    store = _read_store(args.store)
    split = _read_split(args.split)
    pairs = {}
    for name in ("train", "dev"):
        items = _section_items(sentences, store, split, name)
        pairs[name] = [
            (H, treebank.tree_distances(s).astype(np.float64))
            for s, H in items
        ]
    B, report = probe.train(
        config, pairs["train"], pairs["dev"], workers=_threads()
    )
    os.makedirs(args.out, exist_ok=True)
    weights_path = os.path.join(args.out, "weights.kprb")
    probe.save_weights(weights_path, B, config)
    report_path = os.path.join(args.out, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_obj(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(
        args.out, "train",
        {"config": json.loads(config.to_json()), "treebank": args.treebank,
         "store": args.store, "split": args.split},
        started,
        ["weights.kprb", "weights.kprb.json", "report.json"],
    )
    best = report.dev_loss_per_epoch[report.best_epoch]
    print(
        f"trained {report.epochs_run} epochs, best dev loss {best:.6f} "
        f"at epoch {report.best_epoch} -> {weights_path}"
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    started = _now()
    sentences = _read_treebank(args.treebank)
    store = _read_store(args.store)
    split = _read_split(args.split)
    items = _section_items(sentences, store, split, args.section)
    if args.oracle:
        spec = kernels.KernelSpec()
        B = np.zeros((1, store.d1))
        distances = [
            treebank.tree_distances(s).astype(np.float64) for s, _ in items
        ]
    else:
        if not args.weights:
            raise ValueError("eval needs probe weights unless --oracle is set")
        B32, config = probe.load_weights(args.weights)
        B = B32.astype(np.float64)
        spec = config.kernel.resolve(config.d2)
        distances = None
    report = decode_eval.evaluate(
        spec, B, items,
        include_punct=args.include_punct,
        dspr_mode=args.dspr_mode,
        distances=distances,
    )
    doc = report.to_json_obj()
    doc["sentence_ids"] = [s.id for s, _ in items]
    doc["section"] = args.section
    doc["weights"] = args.weights
    doc["include_punct"] = args.include_punct
    doc["dspr_mode"] = args.dspr_mode
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "eval.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    table = report.to_table()
    with open(os.path.join(args.out, "eval.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
        fh.write("\n")
    outputs = ["eval.json", "eval.txt"]
    if args.dump_trees:
        lines = []
        for k, (sent, H) in enumerate(items):
            if distances is not None:
                D = np.asarray(distances[k])
            else:
                D = decode_eval.predict_distances(spec, B, H)
            lines.append(f"# sent_id = {sent.id}")
            for i, j in sorted(decode_eval.prim_mst(D)):
                lines.append(f"{i + 1}\t{j + 1}")
            lines.append("")
        with open(os.path.join(args.out, "trees.txt"), "w",
                  encoding="utf-8") as fh:
            fh.write("\n".join(lines))
        outputs.append("trees.txt")
    _write_manifest(
        args.out, "eval",
        {"weights": args.weights, "treebank": args.treebank,
         "store": args.store, "split": args.split, "section": args.section,
         "oracle": args.oracle, "include_punct": args.include_punct,
         "dspr_mode": args.dspr_mode},
        started, outputs,
    )
    print(table)
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    docs = []
    for path in (args.eval_a, args.eval_b):
        docs.append(json.loads(_read_text(path)))
    key = f"per_sentence_{args.metric}"
    for path, doc in zip((args.eval_a, args.eval_b), docs):
        if key not in doc:
            raise ValueError(f"{path} lacks {key}")
    if docs[0].get("sentence_ids") != docs[1].get("sentence_ids"):
        raise ValueError("eval files cover different sentences")
    scores_a, scores_b = [], []
    for a, b in zip(docs[0][key], docs[1][key]):
        if a is None or b is None:
            continue
        scores_a.append(a)
        scores_b.append(b)
    if not scores_a:
        raise ValueError("no paired sentences to compare")
    p = decode_eval.paired_permutation_test(
        scores_a, scores_b, samples=args.samples, seed=args.seed
    )
    doc = {
        "metric": args.metric,
        "p_value": p,
        "pairs": len(scores_a),
        "samples": args.samples,
        "seed": args.seed,
        "mean_a": float(np.mean(scores_a)),
        "mean_b": float(np.mean(scores_b)),
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        started = _now()
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "compare.json"), "w",
                  encoding="utf-8") as fh:
            fh.write(text)
            fh.write("\n")
        _write_manifest(
            args.out, "compare",
            {"eval_a": args.eval_a, "eval_b": args.eval_b,
             "metric": args.metric, "samples": args.samples,
             "seed": args.seed},
            started, ["compare.json"],
        )
    print(text)
    return 0


# gradcheck instance shapes, kept small so 50 trials run in seconds
_GC_D1 = 8
_GC_D2 = 4
_GC_SPECS = (
    ("linear", kernels.KernelSpec(kind="linear")),
    ("polynomial", kernels.KernelSpec(kind="polynomial", c=1.0, degree=2)),
    ("sigmoid", kernels.KernelSpec(kind="sigmoid", a=0.1, b=0.5)),
    ("rbf", kernels.KernelSpec(kind="rbf").resolve(_GC_D2)),
)


def _fd_gradient(f, B: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(B)
    for i in range(B.shape[0]):
        for j in range(B.shape[1]):
            up = B.copy()
            up[i, j] += eps
            dn = B.copy()
            dn[i, j] -= eps
            g[i, j] = (f(up) - f(dn)) / (2.0 * eps)
    return g


def _gc_draw_pair(spec, rng, counter):
    """A (B, h_i, h_j) instance whose distance sits away from kinks."""
    scale = 1.0 / np.sqrt(_GC_D1)
    for _ in range(1000):
        B = rng.uniform(-scale, scale, (_GC_D2, _GC_D1))
        h_i = rng.standard_normal(_GC_D1)
        h_j = rng.standard_normal(_GC_D1)
        try:
            d = kernels.kernel_distance(spec, B, h_i, h_j, counter=counter)
        except kernels.NegativeRadicandError:
            continue
        if d >= 1e-2:
            return B, h_i, h_j
    raise ArithmeticError("could not draw a well-posed gradcheck pair")


def _gc_draw_sentence(spec, rng, counter):
    """A (B, H, delta) instance away from hinge and zero-distance kinks."""
    scale = 1.0 / np.sqrt(_GC_D1)
    for _ in range(1000):
        n = int(rng.integers(3, 7))
        B = rng.uniform(-scale, scale, (_GC_D2, _GC_D1))
        H = rng.standard_normal((n, _GC_D1))
        heads = [0] + [int(rng.integers(1, t)) for t in range(2, n + 1)]
        toks = tuple(
            treebank.Token(index=t, form=f"w{t}", upos="NOUN", head=heads[t - 1])
            for t in range(1, n + 1)
        )
        delta = treebank.tree_distances(
            treebank.Sentence(id="gc", tokens=toks)
        ).astype(np.float64)
        try:
            D = kernels.pairwise_distances(spec, B, H, counter=counter)
        except kernels.NegativeRadicandError:
            continue
        iu = np.triu_indices(n, k=1)
        if np.min(D[iu]) < 1e-2 or np.min(np.abs(delta[iu] - D[iu])) < 1e-3:
            continue
        return B, H, delta
    raise ArithmeticError("could not draw a well-posed gradcheck sentence")


def run_gradcheck(
    kinds: list, trials: int, seed: int, perturb: float = 0.0
) -> tuple:
    """Audit analytic gradients against central finite differences.

    Returns (rows, all_ok); each row is (label, max relative error,
    clamp events seen while evaluating accepted instances).
    """
    tol = 1e-4
    rows = []
    all_ok = True
    rng = np.random.default_rng(seed)
    lam = 1e-2
    for name, spec in _GC_SPECS:
        if name not in kinds:
            continue
        counter = kernels.ClampCounter()
        worst = 0.0
        for _ in range(trials):
            B, h_i, h_j = _gc_draw_pair(spec, rng, counter)
            grad = kernels.distance_gradient(spec, B, h_i, h_j)
            if perturb:
                grad = grad.copy()
                grad[0, 0] += perturb
            ref = _fd_gradient(
                lambda M: kernels.kernel_distance(spec, M, h_i, h_j), B
            )
            scale = max(float(np.max(np.abs(ref))), 1e-12)
            worst = max(worst, float(np.max(np.abs(grad - ref))) / scale)
        ok = worst < tol
        all_ok = all_ok and ok
        rows.append((f"{name} distance", worst, counter.count, ok))

        for reg in probe.REGULARIZERS:
            counter = kernels.ClampCounter()
            worst = 0.0
            for _ in range(trials):
                B, H, delta = _gc_draw_sentence(spec, rng, counter)

                def objective(M: np.ndarray) -> float:
                    value = probe.sentence_loss(spec, M, H, delta)
                    if reg != "none":
                        value += lam * probe.regularizer(reg, M)[0]
                    return value

                grad = probe.loss_gradient(spec, B, H, delta)
                if reg != "none":
                    grad = grad + lam * probe.regularizer(reg, B)[1]
                if perturb:
                    grad = grad.copy()
                    grad[0, 0] += perturb
                ref = _fd_gradient(objective, B)
                scale = max(float(np.max(np.abs(ref))), 1e-12)
                worst = max(worst, float(np.max(np.abs(grad - ref))) / scale)
            ok = worst < tol
            all_ok = all_ok and ok
            rows.append((f"{name} objective reg={reg}", worst, counter.count, ok))
    return rows, all_ok


def cmd_gradcheck(args: argparse.Namespace) -> int:
    kinds = list(kernels.KINDS) if args.kernel == "all" else [args.kernel]
    started = time.perf_counter()
    rows, all_ok = run_gradcheck(
        kinds, trials=args.samples, seed=args.seed, perturb=args.perturb
    )
    width = max(len(label) for label, _, _, _ in rows)
    for label, err, clamps, ok in rows:
        verdict = "ok" if ok else "FAIL"
        print(f"{label:<{width}}  max rel err {err:.3e}  clamps {clamps}  {verdict}")
    print(f"{'all' if all_ok else 'FAILED'} in {time.perf_counter() - started:.1f}s")
    if not all_ok:
        raise ArithmeticError("gradient check failed")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    started = _now()
    if args.min_len < 1 or args.min_len > args.max_len:
        raise ValueError("need 1 <= min-len <= max-len")
    if args.d1 < args.max_len - 1:
        raise ValueError(
            f"d1 = {args.d1} cannot embed trees with up to "
            f"{args.max_len - 1} edges"
        )
    rng = random.Random(args.seed)
    sentences = []
    for k in range(args.count):
        n = rng.randint(args.min_len, args.max_len)
        toks = []
        for t in range(1, n + 1):
            head = 0 if t == 1 else rng.randint(1, t - 1)
            toks.append(
                treebank.Token(index=t, form=f"w{t}", upos="NOUN", head=head)
            )
        sentences.append(
            treebank.Sentence(id=f"synth-{k:04d}", tokens=tuple(toks))
        )
    records = [
        embeddings.synth_tree_embeddings(
            s, args.d1, noise_sigma=args.noise, seed=args.seed
        )
        for s in sentences
    ]
    store = embeddings.EmbeddingStore(
        d1=args.d1,
        model_tag=f"synthetic-trees(noise={args.noise:g},seed={args.seed})",
        records=records,
    )
    os.makedirs(args.out, exist_ok=True)
    conllu_path = os.path.join(args.out, "treebank.conllu")
    with open(conllu_path, "w", encoding="utf-8") as fh:
        fh.write(treebank.serialize_conllu(sentences))
    store_path = os.path.join(args.out, "store.kpeb")
    with open(store_path, "wb") as fh:
        embeddings.write_store(store, fh)
    _write_manifest(
        args.out, "synth",
        {"count": args.count, "min_len": args.min_len,
         "max_len": args.max_len, "d1": args.d1, "noise": args.noise,
         "seed": args.seed},
        started, ["treebank.conllu", "store.kpeb"],
    )
    print(f"wrote {len(sentences)} sentences -> {conllu_path}, {store_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kprobe",
        description="kernelized syntactic distance probes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="carve a treebank into train/test/dev")
    p.add_argument("--treebank", required=True)
    p.add_argument("--cap", type=int, default=12000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="fit a probe on a split section")
    p.add_argument("--config", required=True)
    p.add_argument("--treebank", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--optimizer", choices=probe.OPTIMIZERS, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="decode and score a split section")
    p.add_argument("weights", nargs="?", default=None)
    p.add_argument("--treebank", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--section", choices=("train", "test", "dev"),
                   default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--include-punct", action="store_true")
    p.add_argument("--dspr-mode", choices=decode_eval.DSPR_MODES,
                   default="banded")
    p.add_argument("--oracle", action="store_true",
                   help="score gold distances instead of a probe")
    p.add_argument("--dump-trees", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="paired permutation test on two evals")
    p.add_argument("eval_a")
    p.add_argument("eval_b")
    p.add_argument("--metric", choices=("uuas", "dspr"), default="uuas")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--kernel", choices=kernels.KINDS + ("all",),
                   default="all")
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturb", type=float, default=0.0,
                   help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="random trees + synthetic embeddings")
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--min-len", type=int, default=5)
    p.add_argument("--max-len", type=int, default=15)
    p.add_argument("--d1", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ArithmeticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
