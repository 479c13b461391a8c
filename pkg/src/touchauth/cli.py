"""Command-line workflow: synthesize datasets, pre-train the fusion model,
enroll users, verify sessions, and evaluate biometric metrics.

Every command is deterministic given (inputs, config, seed); all file
outputs are byte-stable across repeated runs.  Exit codes: verify returns
0 accept / 1 reject / 2 error; other commands return 0 or 2.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import augment, config, embed, metrics, oneclass, pipeline, session_io, synth


def _parse_attacks(text: str | None) -> dict[str, int]:
    if not text:
        return {}
    out = {}
    for item in text.split(","):
        kind, _, count = item.partition("=")
        kind = kind.strip()
        if kind not in ("mimicry", "replica", "puppet"):
            raise ValueError(f"unknown attack kind {kind!r}")
        out[kind] = int(count)
    return out


def cmd_synth(args, cfg) -> int:
    out_dir = Path(args.out)
    sessions_dir = out_dir / "sessions"
    sessions_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed
    sy = cfg["synth"]
    fid_range = sy["attack_fidelity"]
    if isinstance(fid_range, (int, float)):
        fid_range = [float(fid_range), float(fid_range)]
    attacks = _parse_attacks(args.attacks)

    profiles = [synth.gen_user(seed * 100003 + u, user_id=f"u{u:03d}")
                for u in range(args.users)]
    attackers = [synth.gen_user(seed * 100003 + 50000 + a, user_id=f"atk{a:03d}")
                 for a in range(sy["n_attackers"])]

    gen_kwargs = dict(cap_noise=sy["cap_noise"], impulse_amp=sy["impulse_amp"],
                      rebound_frac=sy["rebound_frac"])
    entries = []

    def emit(session, truth, name):
        path = sessions_dir / f"{name}.ndjson"
        session_io.write_session(session, path)
        with open(sessions_dir / f"{name}.truth.json", "w", encoding="utf-8") as fh:
            json.dump(truth, fh, sort_keys=True)
            fh.write("\n")
        entries.append(session_io.ManifestEntry(
            path=f"sessions/{name}.ndjson", user_id=session.meta.user_id,
            label=session.meta.label))

    for u, profile in enumerate(profiles):
        for s in range(args.sessions):
            rng = np.random.default_rng([seed, u, s])
            name = f"{profile.user_id}_g{s:04d}"
            session, truth = synth.gen_session(profile, rng, session_id=name,
                                               perturb_scale=sy["perturb_scale"],
                                               **gen_kwargs)
            emit(session, truth, name)

    for kind, count in sorted(attacks.items()):
        for u, victim in enumerate(profiles):
            for s in range(count):
                rng = np.random.default_rng([seed, 7000 + ord(kind[0]), u, s])
                attacker = attackers[int(rng.integers(0, len(attackers)))]
                fidelity = float(rng.uniform(fid_range[0], fid_range[1]))
                name = f"{victim.user_id}_{kind}{s:04d}"
                session, truth = synth.gen_attack(
                    victim, attacker, synth.AttackSpec(kind, fidelity), rng,
                    session_id=name,
                    replica_cov_inflate=tuple(sy["replica_cov_inflate"]),
                    puppet_damping=tuple(sy["puppet_damping"]),
                    puppet_jerk_hz=tuple(sy["puppet_jerk_hz"]),
                    puppet_jerk_amp=sy["puppet_jerk_amp"], **gen_kwargs)
                emit(session, truth, name)

    with open(out_dir / "profiles.json", "w", encoding="utf-8") as fh:
        json.dump([synth.profile_to_dict(p) for p in profiles + attackers],
                  fh, sort_keys=True, indent=1)
        fh.write("\n")
    session_io.write_manifest(entries, out_dir / "manifest.json")
    config.dump_resolved(cfg, out_dir)
    print(f"wrote {len(entries)} sessions under {out_dir}")
    return 0


def _load_sessions(manifest_path: Path, entries) -> list[session_io.Session]:
    return [session_io.read_session(session_io.manifest_session_path(manifest_path, e))
            for e in entries]


def _embed_entries(manifest_path: Path, entries, model, cfg, workers: int = 1):
    """Embeddings for manifest entries, invariant to worker count."""
    def work(entry):
        session = session_io.read_session(
            session_io.manifest_session_path(manifest_path, entry))
        return pipeline.embed_session(session, model, cfg)
    if workers <= 1:
        return [work(e) for e in entries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(work, entries))


def cmd_pretrain(args, cfg) -> int:
    manifest_path = Path(args.manifest)
    entries = [e for e in session_io.read_manifest(manifest_path) if e.label == "genuine"]
    users = sorted({e.user_id for e in entries})
    if len(users) < 2:
        print("error: pre-training needs at least 2 users in the manifest",
              file=sys.stderr)
        return 2
    sessions = _load_sessions(manifest_path, entries)
    acfg = augment.AugmentConfig(
        warp_factor=cfg["augment"]["warp_factor"],
        base_sigma=cfg["augment"]["base_sigma"],
        min_sigma=cfg["augment"]["min_sigma"],
        a_nominal=cfg["augment"]["a_nominal"],
        n_aug=cfg["augment"]["n_aug"],
        seed=cfg["augment"]["seed"])
    augmented = augment.augment_dataset(sessions, acfg)

    cap_X, imu_X, labels = [], [], []
    for session in augmented:
        try:
            cv, iv = pipeline.descriptor_pair(session, cfg)
        except Exception as exc:
            print(f"error: session {session.meta.session_id}: {exc}", file=sys.stderr)
            return 2
        cap_X.append(cv)
        imu_X.append(iv)
        labels.append(session.meta.user_id)

    log_rows = []
    model = embed.fusion_train(
        np.array(cap_X), np.array(imu_X), labels,
        hidden=cfg["embed"]["hidden"], epochs=cfg["embed"]["epochs"],
        lr=cfg["embed"]["lr"], batch=cfg["embed"]["batch"],
        momentum=cfg["embed"]["momentum"], dropout_p=cfg["embed"]["dropout"],
        seed=cfg["embed"]["seed"],
        on_epoch=lambda e, loss, acc: log_rows.append((e, loss, acc)))

    model_path = Path(args.out_model)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    embed.save_model(model, model_path)
    log_path = Path(args.log) if args.log else model_path.with_suffix(".train_log.csv")
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,head_accuracy\n")
        for e, loss, acc in log_rows:
            fh.write(f"{e},{loss:.8f},{acc:.6f}\n")
    print(f"model written to {model_path} (final head accuracy "
          f"{log_rows[-1][2]:.4f})")
    return 0


def cmd_enroll(args, cfg) -> int:
    manifest_path = Path(args.manifest)
    entries = session_io.read_manifest(manifest_path)
    genuine = [e for e in entries if e.label == "genuine" and e.user_id == args.user]
    impostor_entries = [e for e in entries
                        if e.label == "genuine" and e.user_id != args.user]
    if not genuine:
        print(f"error: no genuine sessions for user {args.user!r}", file=sys.stderr)
        return 2
    model = embed.load_model(args.model)
    own = np.array(_embed_entries(manifest_path, genuine, model, cfg))
    impostors = np.array(_embed_entries(manifest_path, impostor_entries, model, cfg))
    oc = cfg["oneclass"]
    try:
        template = oneclass.enroll(
            own, impostors, user_id=args.user, kind=args.kind,
            threshold_percentile=oc["threshold_percentile"],
            grid=oneclass.default_grid(args.kind, own.shape[1], oc["grid"]),
            seed=oc["seed"], kkt_tol=oc["kkt_tol"], max_iter=oc["max_iter"],
            n_trees=oc["iforest_trees"],
            embed_config_hash=hashlib.sha256(Path(args.model).read_bytes()).hexdigest())
    except oneclass.InsufficientSamplesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out_template) if args.out_template else \
        Path(args.templates) / f"template_{args.user}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    oneclass.save_template(template, out)
    print(f"template written to {out} (kind={args.kind}, "
          f"threshold={template.threshold:.6f})")
    return 0


def cmd_verify(args, cfg) -> int:
    model = embed.load_model(args.model)
    template = oneclass.load_template(args.template)
    t0 = time.perf_counter()
    session = session_io.read_session(args.session)
    embedding = pipeline.embed_session(session, model, cfg)
    score, accept = oneclass.verify(template, embedding)
    latency_ms = (time.perf_counter() - t0) * 1000.0
    print(json.dumps({"score": round(score, 9), "accept": bool(accept),
                      "latency_ms": round(latency_ms, 3)}))
    return 0 if accept else 1


def cmd_evaluate(args, cfg) -> int:
    manifest_path = Path(args.manifest)
    entries = session_io.read_manifest(manifest_path)
    model = embed.load_model(args.model)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    users_dir = out_dir / "users"
    users_dir.mkdir(exist_ok=True)

    victim_ids = sorted({e.user_id for e in entries})
    templates = {}
    for uid in victim_ids:
        tpath = Path(args.templates) / f"template_{uid}.json"
        if not tpath.exists():
            print(f"error: missing template for user {uid} at {tpath}", file=sys.stderr)
            return 2
        templates[uid] = oneclass.load_template(tpath)

    embeddings = np.array(_embed_entries(manifest_path, entries, model, cfg,
                                         workers=args.workers))

    genuine_idx = {uid: [] for uid in victim_ids}
    attack_idx: dict[tuple[str, str], list[int]] = {}
    for i, e in enumerate(entries):
        if e.label == "genuine":
            genuine_idx[e.user_id].append(i)
        else:
            attack_idx.setdefault((e.user_id, e.label), []).append(i)

    pooled_gen, pooled_imp = [], []
    confusion = {"ta": 0, "tr": 0, "fa": 0, "fr": 0}
    for uid in victim_ids:
        template = templates[uid]
        own = embeddings[genuine_idx[uid]]
        other = np.concatenate([embeddings[genuine_idx[v]]
                                for v in victim_ids if v != uid and genuine_idx[v]]) \
            if len(victim_ids) > 1 else np.empty((0, embed.EMBED_DIM))
        g = oneclass.score_batch(template.kind, template.model, own)
        i_scores = oneclass.score_batch(template.kind, template.model, other) \
            if len(other) else np.array([])
        pooled_gen.extend(g - template.threshold)
        pooled_imp.extend(i_scores - template.threshold)
        confusion["ta"] += int(np.sum(g >= template.threshold))
        confusion["fr"] += int(np.sum(g < template.threshold))
        confusion["fa"] += int(np.sum(i_scores >= template.threshold))
        confusion["tr"] += int(np.sum(i_scores < template.threshold))
        if len(g) and len(i_scores):
            curve = metrics.roc(g, i_scores)
            metrics.write_roc_csv(curve, users_dir / f"roc_{uid}.csv")
            with open(users_dir / f"summary_{uid}.json", "w", encoding="utf-8") as fh:
                json.dump({"user_id": uid, "eer": metrics.eer(curve),
                           "threshold": template.threshold,
                           "n_genuine": len(g), "n_impostor": len(i_scores)},
                          fh, sort_keys=True)
                fh.write("\n")

    pooled_gen = np.array(pooled_gen)
    pooled_imp = np.array(pooled_imp)
    curve = metrics.roc(pooled_gen, pooled_imp)
    metrics.write_roc_csv(curve, out_dir / "roc.csv")
    metrics.write_histogram_csv(
        metrics.score_histogram(pooled_gen, pooled_imp, bins=50),
        out_dir / "hist.csv")
    proj = metrics.project_2d(embeddings)
    metrics.write_projection_csv(proj, [e.path for e in entries], out_dir / "proj.csv")

    eer_value = metrics.eer(curve)
    c = metrics.Confusion(**confusion)
    r = metrics.rates(c)
    summary = {
        "eer": eer_value,
        "far": r.far,
        "frr": r.frr,
        "accuracy": r.accuracy,
        "bac_at_threshold": r.bac,
        "bac_at_eer": 1.0 - eer_value,
        "n_genuine": int(len(pooled_gen)),
        "n_impostor": int(len(pooled_imp)),
        "score_convention": "accept on score >= threshold; pooled scores are "
                            "shifted by each template's threshold",
    }
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
        fh.write("\n")

    with open(out_dir / "attack_far.csv", "w", encoding="utf-8") as fh:
        fh.write("victim,kind,n_attacks,false_accepts,far\n")
        for (uid, kind) in sorted(attack_idx):
            template = templates[uid]
            scores = oneclass.score_batch(template.kind, template.model,
                                          embeddings[attack_idx[(uid, kind)]])
            fa = int(np.sum(scores >= template.threshold))
            fh.write(f"{uid},{kind},{len(scores)},{fa},{fa / len(scores):.6f}\n")

    config.dump_resolved(cfg, out_dir)
    print(f"evaluation written to {out_dir} (pooled EER {eer_value:.4f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="touchauth",
        description="Multimodal touch-press authentication pipeline")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON config file "
                        "(falls back to TOUCHAUTH_CONFIG)")
    common.add_argument("--seed", type=int, default=None, help="global seed override")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="K=V", help="config override (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--sessions", type=int, required=True,
                   help="genuine sessions per user")
    p.add_argument("--attacks", default=None,
                   help="attack counts per victim, e.g. replica=100,puppet=50")
    p.add_argument("--out", required=True)

    p = sub.add_parser("pretrain", parents=[common], help="train the fusion model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--log", default=None, help="training log CSV path")

    p = sub.add_parser("enroll", parents=[common], help="enroll one user from genuine sessions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--kind", default=None, choices=list(oneclass.KINDS))
    p.add_argument("--templates", default="templates",
                   help="directory for template files")
    p.add_argument("--out-template", default=None)

    p = sub.add_parser("verify", parents=[common], help="verify one session against a template")
    p.add_argument("--session", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--model", required=True)

    p = sub.add_parser("evaluate", parents=[common], help="score a dataset and emit metrics files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--templates", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config.load_config(args.config, tuple(args.overrides))
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.command == "synth":
            args.seed = cfg["seed"] if args.seed is None else args.seed
            return cmd_synth(args, cfg)
        if args.command == "pretrain":
            return cmd_pretrain(args, cfg)
        if args.command == "enroll":
            if args.kind is None:
                args.kind = cfg["oneclass"]["kind"]
            return cmd_enroll(args, cfg)
        if args.command == "verify":
            return cmd_verify(args, cfg)
        if args.command == "evaluate":
            return cmd_evaluate(args, cfg)
        parser.error(f"unknown command {args.command}")
    except BrokenPipeError:
        raise
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
