"""Command-line entry points: serve, sim, device-emu, operate, bench-ik,
make-script.

Exit codes are a stable contract: 0 success, 1 assertion/event mismatch,
2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import math
import signal
import socket
import sys
import threading
import time

import numpy as np

from . import core as kin_core
from .config import ConfigError
from .device import DeviceServer, SpecimenModel, TesterEmulator
from .geometry import Pose
from .ik import IkRequest, IkStatus, solve
from .kinematics import JointState, forward, load_arm
from .protocol import (
    SessionAccept,
    SessionHello,
    StateMsg,
    StreamDecoder,
    TaskStep,
    WaypointMsg,
    encode,
)
from .scripting import generate_cycle_script, parse_script, write_script
from .server import load_server_config, resolve_arm_path
from .sim import SimConfig, SimUdpServer


def _default_server_config() -> str:
    import importlib.resources as resources

    return str(resources.files("armteleop") / "configs" / "server.cfg")


def _load_cfg(path: str | None):
    return load_server_config(path or _default_server_config())


def _run_until_signal(stop_fns) -> None:
    done = threading.Event()

    def handler(_sig, _frm):
        done.set()

    signal.signal(signal.SIGINT, handler)
    signal.signal(signal.SIGTERM, handler)
    try:
        while not done.wait(0.2):
            pass
    finally:
        for fn in stop_fns:
            fn()


# ---------------------------------------------------------------------------


def cmd_serve(args) -> int:
    from .gateway import GatewayServer
    from .shell import ServerShell

    cfg = _load_cfg(args.config)
    for attr, flag in (
        ("tcp_port", args.tcp_port),
        ("cmd_port", args.cmd_port),
        ("feedback_port", args.feedback_port),
        ("device_port", args.device_port),
        ("http_port", args.http_port),
    ):
        if flag is not None:
            setattr(cfg, attr, flag)
    try:
        shell = ServerShell(cfg)
    except OSError as e:
        print(f"error: cannot bind server ports: {e}", file=sys.stderr)
        return 2
    if args.record:
        shell.core.recording = True
    shell.start()
    try:
        gateway = GatewayServer(shell, port=cfg.http_port)
        gateway.start()
    except (OSError, RuntimeError) as e:
        print(f"error: cannot start web gateway: {e}", file=sys.stderr)
        shell.stop()
        return 2
    print(
        f"serving: operator tcp :{shell.tcp_port}, cmd udp -> :{cfg.cmd_port}, "
        f"feedback udp :{shell.feedback_port}, http :{gateway.port}"
    )
    _run_until_signal([gateway.stop, shell.stop])
    if args.record:
        shell.core.write_trace(args.record)
        print(f"recorded {len(shell.core.record_rows)} waypoints to {args.record}")
    return 0


def cmd_sim(args) -> int:
    cfg = _load_cfg(args.config)
    legacy = None
    if args.legacy_rate is not None:
        legacy = float(args.legacy_rate.lower().removesuffix("hz"))
    sim_cfg = SimConfig(
        tick_rate=args.tick_rate,
        delay_ms=args.delay_ms,
        jitter_ms=args.jitter_ms,
        loss_pct=args.loss_pct,
        seed=args.seed,
        legacy_rate=legacy,
        initial_q_deg=list(np.rad2deg(cfg.home_q)),
    )
    try:
        server = SimUdpServer(
            cfg.model, sim_cfg, listen=("0.0.0.0", args.listen), feedback_port=args.feedback
        )
    except OSError as e:
        print(f"error: cannot bind sim port {args.listen}: {e}", file=sys.stderr)
        return 2
    if args.trace:
        server.core.trace_enabled = True
    server.start()
    mode = f"legacy {legacy} Hz" if legacy else f"{args.tick_rate:.0f} Hz"
    print(f"sim: {cfg.model.name} on udp :{args.listen} -> feedback :{args.feedback} ({mode})")
    _run_until_signal([server.stop])
    if args.trace:
        server.core.write_trace(args.trace)
        print(f"wrote {len(server.core.trace)} trace rows to {args.trace}")
    return 0


def cmd_device_emu(args) -> int:
    emulator = TesterEmulator(
        SpecimenModel(
            stiffness=args.stiffness,
            yield_load=args.yield_load,
            noise_sigma=args.noise_sigma,
            seed=args.seed,
        ),
        duration_s=args.duration_s,
        results_path=args.results,
    )
    try:
        server = DeviceServer(emulator, port=args.port)
    except OSError as e:
        print(f"error: cannot bind device port {args.port}: {e}", file=sys.stderr)
        return 2
    server.start()
    print(f"tensile tester emulator on tcp :{server.port}, results -> {args.results}")
    _run_until_signal([server.stop])
    return 0


# ---------------------------------------------------------------------------


def cmd_operate(args) -> int:
    cfg = _load_cfg(args.config)
    script = parse_script(args.script)
    if args.mode == "fast":
        from .harness import LoopbackHarness

        sim_cfg = SimConfig(
            tick_rate=cfg.command_hz,
            delay_ms=args.sim_delay_ms,
            jitter_ms=args.sim_jitter_ms,
            loss_pct=args.sim_loss_pct,
            seed=args.seed,
            initial_q_deg=list(np.rad2deg(cfg.home_q)),
        )
        harness = LoopbackHarness(
            cfg,
            sim_cfg=sim_cfg,
            specimen=SpecimenModel(seed=args.seed),
            results_path=args.results,
        )
        result = harness.run_script(script)
        for i, s in result.cycle_log:
            print(f"cycle {i}: {s:.2f} s")
        report = result.metrics
        print(
            f"waypoints {report.wp_total}, degraded {report.degraded_events}, "
            f"warnings {report.warnings}, fence holds {report.fence_holds}"
        )
        if args.metrics_out:
            report.write_csv(f"{args.metrics_out}_stages.csv", f"{args.metrics_out}_cycles.csv")
            with open(f"{args.metrics_out}.json", "w", encoding="utf-8") as f:
                f.write(report.to_json())
        if not result.ok:
            print(result.event_diff(), file=sys.stderr)
            return 1
        print(f"all {len(result.expected)} expected task events fired")
        return 0
    return _operate_real(args, script)


def _operate_real(args, script) -> int:
    """Replay against a live serve (+ sim + device-emu) over the wire."""
    try:
        conn = socket.create_connection((args.host, args.port), timeout=5)
    except OSError as e:
        print(f"error: cannot reach server {args.host}:{args.port}: {e}", file=sys.stderr)
        return 2
    conn.sendall(encode(SessionHello()))
    decoder = StreamDecoder()
    conn.settimeout(5.0)
    accepted = False
    while not accepted:
        msgs = decoder.feed(conn.recv(65536))
        for msg in msgs:
            if isinstance(msg, SessionAccept):
                accepted = True
            elif hasattr(msg, "reason"):
                print(f"error: session rejected: {msg.reason.name}", file=sys.stderr)
                return 1

    events: list[str] = []
    prev_step = TaskStep.CONNECT
    stop = threading.Event()

    def reader():
        nonlocal prev_step
        conn.settimeout(0.5)
        while not stop.is_set():
            try:
                data = conn.recv(65536)
            except socket.timeout:
                continue
            except OSError:
                return
            if not data:
                return
            for msg in decoder.feed(data):
                if isinstance(msg, StateMsg):
                    step = msg.task_step
                    if step is not prev_step:
                        edge = {
                            (TaskStep.PICK, TaskStep.PLACE): "pick",
                            (TaskStep.PLACE, TaskStep.TEST): "place",
                            (TaskStep.TEST, TaskStep.RETURN): "test_complete",
                            (TaskStep.RETURN, TaskStep.PICK): "returned",
                        }.get((prev_step, step))
                        if edge:
                            events.append(edge)
                        prev_step = step

    t = threading.Thread(target=reader, daemon=True)
    t.start()
    t0 = time.monotonic()
    speed = args.speed
    for seq, row in enumerate(script.rows, start=1):
        due = t0 + row.t_us / 1e6 / speed
        delay = due - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        wp = WaypointMsg(
            seq=seq,
            send_time=int((time.monotonic() - t0) * 1e6),
            pose=row.pose,
            clutch=row.clutch,
            gripper=row.gripper,
            buttons=row.buttons,
        )
        conn.sendall(encode(wp))
    time.sleep(args.settle_s / speed)
    stop.set()
    t.join(timeout=2)
    conn.close()

    expected = script.expected_events()
    if events != expected:
        print("event mismatch:", file=sys.stderr)
        print(f"  expected: {expected}", file=sys.stderr)
        print(f"  fired:    {events}", file=sys.stderr)
        return 1
    print(f"all {len(expected)} expected task events fired")
    return 0


# ---------------------------------------------------------------------------


def _bench_one(model, impl_name: str, n: int, seed: int, budget_us: float, perturb_deg: float):
    rng = np.random.default_rng(seed)
    times = []
    ok = 0
    pos_res = []
    rot_res = []
    perturb = math.radians(perturb_deg)
    # measure the full public solve path with the chosen kernel routed in
    with kin_core.use_backend(impl_name):
        for k in range(n):
            q_true = model.random_q(rng, margin=0.2)
            target = forward(model, q_true)
            seed_q = model.clamp(q_true + rng.uniform(-perturb, perturb, model.ndof))
            req = IkRequest(
                target=target, seed=JointState(seed_q), budget_us=budget_us, rng_seed=k
            )
            t0 = time.monotonic_ns()
            sol = solve(model, req)
            times.append((time.monotonic_ns() - t0) / 1e3)
            if sol.status is IkStatus.CONVERGED:
                ok += 1
                pos_res.append(sol.residual.norm_linear())
                rot_res.append(sol.residual.norm_angular())
    t = np.asarray(times)
    return {
        "impl": impl_name,
        "n": n,
        "success": ok / n,
        "median_us": float(np.median(t)),
        "p95_us": float(np.percentile(t, 95)),
        "max_us": float(t.max()),
        "pos_residual_max": max(pos_res) if pos_res else float("nan"),
        "rot_residual_max": max(rot_res) if rot_res else float("nan"),
    }


def cmd_bench_ik(args) -> int:
    model = load_arm(resolve_arm_path(args.arm))
    impls = []
    if args.impl == "both":
        impls = kin_core.available_backends()
    elif args.impl == "default":
        impls = [kin_core.BACKEND]
    else:
        if args.impl not in kin_core.available_backends():
            print(f"error: backend {args.impl!r} not available", file=sys.stderr)
            return 2
        impls = [args.impl]
    if args.unreachable:
        rng = np.random.default_rng(args.seed)
        n_unreach = 0
        for _ in range(args.n):
            target = Pose(rng.normal(size=3) * 10 * model.reach)
            sol = solve(model, IkRequest(target=target, seed=JointState(np.zeros(model.ndof))))
            n_unreach += sol.status is IkStatus.UNREACHABLE
        print(f"unreachable targets: {n_unreach}/{args.n} reported unreachable")
        return 0 if n_unreach == args.n else 1
    print(f"arm {model.name}, {args.n} random reachable targets, seeds perturbed <= {args.perturb_deg} deg")
    rows = [_bench_one(model, impl, args.n, args.seed, args.budget_us, args.perturb_deg) for impl in impls]
    print(f"{'impl':<10} {'success':>8} {'median':>10} {'p95':>10} {'max':>10}  residual(max pos/rot)")
    for r in rows:
        print(
            f"{r['impl']:<10} {r['success'] * 100:>7.1f}% {r['median_us']:>8.1f}us {r['p95_us']:>8.1f}us "
            f"{r['max_us']:>8.1f}us  {r['pos_residual_max']:.2e} m / {r['rot_residual_max']:.2e} rad"
        )
    primary = rows[0]
    ok = (
        primary["success"] >= 0.99
        and primary["median_us"] < 1000.0
        and primary["p95_us"] < 2 * args.budget_us
    )
    return 0 if ok else 1


def cmd_make_script(args) -> int:
    cfg = _load_cfg(args.config)
    script = generate_cycle_script(cfg, cycles=args.cycles, period_s=args.period_s, rate_hz=args.rate_hz)
    write_script(args.out, script)
    print(f"wrote {len(script.rows)} waypoints / {len(script.expects)} expected events to {args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="armteleop", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("serve", help="run the teleoperation server")
    s.add_argument("--config", help="server config file (default: packaged desk setup)")
    s.add_argument("--tcp-port", type=int)
    s.add_argument("--cmd-port", type=int)
    s.add_argument("--feedback-port", type=int)
    s.add_argument("--device-port", type=int)
    s.add_argument("--http-port", type=int)
    s.add_argument("--record", help="record incoming waypoints to this CSV on shutdown")
    s.set_defaults(fn=cmd_serve)

    s = sub.add_parser("sim", help="run the simulated arm endpoint")
    s.add_argument("--config", help="server config file (arm model + home posture)")
    s.add_argument("--listen", type=int, default=6041)
    s.add_argument("--feedback", type=int, default=6042)
    s.add_argument("--tick-rate", type=float, default=250.0)
    s.add_argument("--delay-ms", type=float, default=0.0)
    s.add_argument("--jitter-ms", type=float, default=0.0)
    s.add_argument("--loss-pct", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--legacy-rate", help="slow command-polling mode, e.g. 4hz")
    s.add_argument("--trace", help="write per-tick joint trace CSV on shutdown")
    s.set_defaults(fn=cmd_sim)

    s = sub.add_parser("device-emu", help="run the tensile tester emulator")
    s.add_argument("--port", type=int, default=6050)
    s.add_argument("--results", default="results.csv")
    s.add_argument("--duration-s", type=float, default=8.0)
    s.add_argument("--stiffness", type=float, default=250.0)
    s.add_argument("--yield-load", type=float, default=500.0)
    s.add_argument("--noise-sigma", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_device_emu)

    s = sub.add_parser("operate", help="headless scripted operator (replay)")
    s.add_argument("--script", required=True)
    s.add_argument("--mode", choices=["fast", "real"], default="fast")
    s.add_argument("--config", help="server config file")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=6040)
    s.add_argument("--speed", type=float, default=1.0, help="real-mode time scale (2 = twice as fast)")
    s.add_argument("--settle-s", type=float, default=6.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--results", help="fast mode: tester results csv path")
    s.add_argument("--metrics-out", help="fast mode: write metrics CSV/JSON with this prefix")
    s.add_argument("--sim-delay-ms", type=float, default=0.0)
    s.add_argument("--sim-jitter-ms", type=float, default=0.0)
    s.add_argument("--sim-loss-pct", type=float, default=0.0)
    s.set_defaults(fn=cmd_operate)

    s = sub.add_parser("bench-ik", help="IK latency benchmark over random reachable targets")
    s.add_argument("--arm", default="ur5e", help="packaged model name or config path")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--budget-us", type=float, default=1000.0)
    s.add_argument("--perturb-deg", type=float, default=5.0)
    s.add_argument("--impl", choices=["default", "pure", "compiled", "both"], default="default")
    s.add_argument("--unreachable", action="store_true", help="bench the unreachable pre-check instead")
    s.set_defaults(fn=cmd_bench_ik)

    s = sub.add_parser("make-script", help="generate a scripted lab-cycle replay")
    s.add_argument("--config", help="server config file")
    s.add_argument("--cycles", type=int, default=10)
    s.add_argument("--period-s", type=float, default=68.0)
    s.add_argument("--rate-hz", type=float, default=20.0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_make_script)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
