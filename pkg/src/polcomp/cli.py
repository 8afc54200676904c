"""Scenario runner: builds a network from a config file, runs drift and
compensation experiments, and emits plan/comparison/stability artifacts.

Commands
    plan       topology, channel plan and controller accounting (JSON)
    compare    run the enabled schemes over the seeded fibre ensemble and
               emit a per-method summary table (CSV + JSON)
    stability  compensate once, then drift; per-link error-rate trace
    simulate   raw tag-stream dump of every link in PTAG1 format

Exit codes: 0 success, 2 configuration error, 3 convergence failure on
at least one item, 4 inter-user delay not found.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    DelayNotFound,
    estimated_fidelity,
    expected_qber,
    fidelity_from_qber,
    qber_contribution,
)
from .channel import DriftProcess, step_drift
from .compensate import (
    DISRUPTIVE,
    QberAcquisition,
    compensate_blinking,
    compensate_manual,
    compensate_mpc,
    compensate_qber,
    reports_to_csv,
)
from .netplan import growth_cost, plan_to_dict
from .photostream import alternating_windows, detect_pair_events, generate_pairs, write_ptag
from .polmath import BASES, apply_local, werner_state
from .scenario import (
    BuiltNetwork,
    Scenario,
    ScenarioError,
    aligned_path,
    build_network,
    fresh_arm_path,
    parse_scenario,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_NO_DELAY = 4


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _save_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _link_name(link) -> str:
    return "-".join(link)


def cmd_plan(sc: Scenario, args) -> int:
    net = build_network(sc)
    doc = plan_to_dict(net.topo, net.plan)
    doc["growth_cost"] = [
        {
            "new_user_index": n,
            "canonical": growth_cost(n, "canonical"),
            "qber_min": growth_cost(n, "qber_min"),
        }
        for n in range(2, 13)
    ]
    doc["link_loss_db"] = {
        _link_name(l): round(net.link_loss_db[l], 6) for l in net.topo.links
    }
    out = _out_dir(args)
    _save_json(doc, out / "plan.json")
    print(f"plan: {len(net.topo.users)} users, {len(net.topo.links)} links -> "
          f"{out / 'plan.json'}")
    return EXIT_OK


def _compare_items(net: BuiltNetwork):
    """Work items per method: canonical schemes compensate both fibre paths
    of every link; the error-rate scheme compensates one source fibre per
    user against an aligned partner."""
    sc = net.scenario
    items = []
    for method in sc.methods:
        if method == "qber_min":
            users = sorted(net.topo.users)
            for idx, user in enumerate(users):
                partner = users[(idx + 1) % len(users)]
                items.append((method, f"fibre-{user}", (user, partner)))
        else:
            for link in net.topo.links:
                for arm_user in link:
                    items.append((method, f"{_link_name(link)}/{arm_user}", (link, arm_user)))
    return items


def _run_compare_item(payload):
    sc, method, item, detail, seq = payload
    net = build_network(sc)
    cost = sc.cost_model()
    seed = (sc.seed, 101, seq)
    if method == "qber_min":
        user, partner = detail
        link = tuple(sorted((user, partner)))
        arm_loss, _ = net.arm_losses(link)
        loss_db = -10.0 * np.log10(arm_loss)
        path_a = fresh_arm_path(net, user, loss_db, side="source")
        path_b = aligned_path(net, partner, loss_db, side="source")
        path_b.link.loss_db = loss_db
        report = compensate_qber(
            path_a,
            path_b,
            net.source_for_link(link),
            acq=QberAcquisition(window_s=sc.acquisition_window_s),
            target_qber=sc.qber_target,
            cost=cost,
            seed=seed,
            det_a=net.detectors[user],
            det_b=net.detectors[partner],
        )
    else:
        link, arm_user = detail
        path = fresh_arm_path(net, arm_user, 0.0, side="receiver")
        if method == "manual":
            report = compensate_manual(
                path, sc.target_visibility, cost, seed, sc.manual_mean_photons
            )
        elif method == "mpc":
            report = compensate_mpc(path, None, cost, seed, sc.mean_photons)
        elif method == "blinking":
            report = compensate_blinking(
                path,
                sc.blinking_integration_s,
                None,
                sc.blinking_target,
                cost,
                seed,
                sc.blinking_rate_hz,
            )
        else:
            raise ValueError(f"unknown method {method!r}")
    row = report.to_dict()
    row["seed"] = sc.seed
    row["item"] = item
    return row


def cmd_compare(sc: Scenario, args) -> int:
    net = build_network(sc)
    items = _compare_items(net)
    payloads = [
        (sc, method, item, detail, seq)
        for seq, (method, item, detail) in enumerate(items)
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_run_compare_item, payloads))
    else:
        rows = [_run_compare_item(p) for p in payloads]

    summary = []
    for method in sc.methods:
        m_rows = [r for r in rows if r["method"] == method]
        vis = np.array([
            (r["final_visibility_hv"] + r["final_visibility_da"]) / 2.0
            for r in m_rows
        ])
        times = np.array([r["modeled_time_s"] for r in m_rows])
        shots = np.array([r["shots_used"] for r in m_rows])
        n = len(m_rows)
        if method == "qber_min":
            qbers = np.array([r["final_qber"] for r in m_rows])
            q_mean = float(qbers.mean())
            q_stderr = float(qbers.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
            fidelity = fidelity_from_qber(q_mean)
            fid_kind = "measured"
            contribution = None
            time_per_link = float(times.mean())
        else:
            q_mean = None
            q_stderr = None
            contribution = qber_contribution(float(np.clip(vis.mean(), 0.0, 1.0)))
            fidelity = estimated_fidelity(contribution)
            fid_kind = "estimated"
            # canonical schemes compensate two fibre paths per link
            time_per_link = float(times.mean() * 2.0)
        summary.append({
            "method": method,
            "items": n,
            "visibility_mean": float(vis.mean()),
            "visibility_stderr": float(vis.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
            "qber_contribution": contribution,
            "fidelity": fidelity,
            "fidelity_kind": fid_kind,
            "qber_mean": q_mean,
            "qber_stderr": q_stderr,
            "shots_mean": float(shots.mean()),
            "time_per_link_s": time_per_link,
            "disruptive": DISRUPTIVE[method],
            "n_converged": int(sum(r["converged"] for r in m_rows)),
        })

    out = _out_dir(args)
    if args.format in ("csv", "both"):
        reports_to_csv(rows, out / "compare_items.csv")
        _write_summary_csv(summary, out / "compare.csv")
    if args.format in ("json", "both"):
        _save_json(
            {"schema_version": 1, "seed": sc.seed, "methods": summary},
            out / "compare.json",
        )

    failed = [r for r in rows if not r["converged"]]
    for r in failed:
        print(f"warning: {r['method']} did not converge on {r['item']}", file=sys.stderr)
    for s in summary:
        print(
            f"{s['method']:>8}: vis {s['visibility_mean']:.4f} "
            f"time/link {s['time_per_link_s']:.0f} s "
            f"converged {s['n_converged']}/{s['items']} "
            f"disruptive {s['disruptive']}"
        )
    return EXIT_CONVERGENCE if failed else EXIT_OK


_SUMMARY_FIELDS = (
    "method", "items", "visibility_mean", "visibility_stderr",
    "qber_contribution", "fidelity", "fidelity_kind", "qber_mean",
    "qber_stderr", "shots_mean", "time_per_link_s", "disruptive",
    "n_converged",
)


def _write_summary_csv(summary, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_SUMMARY_FIELDS)
        writer.writeheader()
        for row in summary:
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in _SUMMARY_FIELDS})


def cmd_stability(sc: Scenario, args) -> int:
    if args.days is not None:
        sc.horizon_days = args.days
    if sc.horizon_days <= 0:
        raise ScenarioError(f"horizon must be positive, got {sc.horizon_days}")
    net = build_network(sc)
    steps = int(round(sc.horizon_days * 24.0 * 3600.0 / sc.drift_step_s))
    process = DriftProcess(sc.drift_step_s, sc.drift_sigma, sc.seed)

    # start from an aligned network: every user's effective unitary is I
    fibres = {
        u: aligned_path(net, u).link for u in net.topo.users
    }
    rho = {link: werner_state(net.link_werner_p[link]) for link in net.topo.links}

    out = _out_dir(args)
    traces = {link: [] for link in net.topo.links}
    with open(out / "stability_trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "hours", "link", "qber"])
        for step in range(steps + 1):
            hours = step * sc.drift_step_s / 3600.0
            for link in net.topo.links:
                ua = fibres[link[0]].birefringence
                ub = fibres[link[1]].birefringence
                q = expected_qber(ua, ub, rho[link])
                traces[link].append(q)
                writer.writerow([step, f"{hours:.3f}", _link_name(link), f"{q:.8f}"])
            fibres = {u: step_drift(f, process) for u, f in fibres.items()}

    stds = {link: float(np.std(np.array(traces[link]))) for link in net.topo.links}
    summary = {
        "schema_version": 1,
        "seed": sc.seed,
        "horizon_days": sc.horizon_days,
        "steps": steps,
        "drift_sigma": sc.drift_sigma,
        "per_link_qber_std": {_link_name(l): stds[l] for l in net.topo.links},
        "mean_qber_std": float(np.mean(list(stds.values()))),
    }
    _save_json(summary, out / "stability_summary.json")
    print(f"stability: mean per-link QBER std {summary['mean_qber_std']:.4%} "
          f"over {sc.horizon_days} days")
    return EXIT_OK


def cmd_simulate(sc: Scenario, args) -> int:
    net = build_network(sc)
    out = _out_dir(args)
    window_ps = int(0.05e12)  # 50 ms basis windows
    manifest = {"schema_version": 1, "seed": sc.seed, "links": {}}
    for idx, link in enumerate(net.topo.links):
        ua, ub = link
        src = net.source_for_link(link)
        seed = (sc.seed, 202, idx)
        events = generate_pairs(src, sc.simulate_duration_s, seed)
        loss_a, loss_b = net.arm_losses(link)
        rho_eff = apply_local(
            net.user_fibres[ua].birefringence,
            net.user_fibres[ub].birefringence,
            werner_state(net.link_werner_p[link]),
        )
        windows = alternating_windows(events.duration_ps, window_ps)
        # fixed-basis acquisition per window, both users synchronized
        stream_a = stream_b = None
        for w_start, w_end, label in windows:
            mask = (events.t_ps >= w_start) & (events.t_ps < w_end)
            sub = type(events)(events.t_ps[mask], events.u_outcome[mask], events.duration_ps)
            sa, sb = detect_pair_events(
                sub,
                rho_eff,
                BASES[label],
                BASES[label],
                net.detectors[ua],
                net.detectors[ub],
                loss_a,
                loss_b,
                seed=(sc.seed, 203, idx, w_start),
                delay_a_ps=net.user_fibres[ua].delay_ps,
                delay_b_ps=net.user_fibres[ub].delay_ps,
            )
            stream_a = sa if stream_a is None else _concat_streams(stream_a, sa)
            stream_b = sb if stream_b is None else _concat_streams(stream_b, sb)
        name = _link_name(link)
        write_ptag(stream_a, out / f"{name}_{ua}.ptag", seed=sc.seed)
        write_ptag(stream_b, out / f"{name}_{ub}.ptag", seed=sc.seed)
        manifest["links"][name] = {
            "files": [f"{name}_{ua}.ptag", f"{name}_{ub}.ptag"],
            "tags": [len(stream_a), len(stream_b)],
            "duration_ps": int(events.duration_ps),
        }
    _save_json(manifest, out / "simulate_manifest.json")
    print(f"simulate: wrote {2 * len(net.topo.links)} streams to {out}")
    return EXIT_OK


def _concat_streams(a, b):
    from .photostream import TagStream

    t = np.concatenate([a.t_ps, b.t_ps])
    d = np.concatenate([a.detector_ids, b.detector_ids])
    order = np.argsort(t, kind="stable")
    return TagStream(t[order], d[order], a.duration_ps, a.detector_names)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polcomp",
        description="polarization compensation scenario runner",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("plan", "write topology, channel plan and controller accounting"),
        ("compare", "run enabled compensation schemes and summarize"),
        ("stability", "drift the compensated network and trace error rates"),
        ("simulate", "dump raw tag streams in PTAG1 format"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--scenario", required=True, help="scenario file path")
        p.add_argument("--seed", type=int, default=None, help="override scenario seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers")
        p.add_argument(
            "--format", choices=("csv", "json", "both"), default="both",
            help="output formats for tabular artifacts",
        )
        if name == "stability":
            p.add_argument("--days", type=float, default=None, help="horizon override")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = parse_scenario(args.scenario)
        if args.seed is not None:
            sc.seed = args.seed
        sc.validate()
        handler = {
            "plan": cmd_plan,
            "compare": cmd_compare,
            "stability": cmd_stability,
            "simulate": cmd_simulate,
        }[args.command]
        return handler(sc, args)
    except (ScenarioError, ValueError) as exc:
        # invalid configuration, including derived limits such as an
        # exhausted channel band
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DelayNotFound as exc:
        print(f"delay error: {exc}", file=sys.stderr)
        return EXIT_NO_DELAY


if __name__ == "__main__":
    sys.exit(main())
