"""CLI contract: exit codes, subcommand wiring, and the three-process
composition over real sockets."""

import socket
import subprocess
import sys
import time

import pytest

from armteleop.cli import main
from armteleop.protocol import SessionAccept, SessionHello, StreamDecoder, encode


def free_port() -> int:
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


def run_cli(*args):
    return main(list(args))


class TestExitCodes:
    def test_missing_config_is_usage_error(self, capsys):
        assert run_cli("serve", "--config", "/does/not/exist.cfg") == 2
        assert "config error" in capsys.readouterr().err

    def test_bad_script_is_config_error(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("wp,nope\n")
        assert run_cli("operate", "--script", str(bad)) == 2

    def test_unknown_subcommand_usage(self):
        with pytest.raises(SystemExit) as e:
            run_cli("frobnicate")
        assert e.value.code == 2

    def test_port_conflict_explicit_error(self, capsys, tmp_path):
        blocker = socket.create_server(("0.0.0.0", 0))
        port = blocker.getsockname()[1]
        try:
            assert run_cli("serve", "--tcp-port", str(port)) == 2
            assert "cannot bind" in capsys.readouterr().err
        finally:
            blocker.close()


class TestMakeAndOperate:
    def test_empty_script_exits_zero_with_no_cycles(self, tmp_path, capsys):
        empty = tmp_path / "empty.csv"
        empty.write_text("# no rows\n")
        assert run_cli("operate", "--script", str(empty), "--mode", "fast") == 0

    def test_one_cycle_golden_replay(self, tmp_path, capsys):
        script = tmp_path / "one.csv"
        assert run_cli("make-script", "--cycles", "1", "--out", str(script)) == 0
        code = run_cli(
            "operate",
            "--script",
            str(script),
            "--mode",
            "fast",
            "--results",
            str(tmp_path / "r.csv"),
        )
        out = capsys.readouterr().out
        assert code == 0
        assert "cycle 1:" in out
        assert "all 4 expected task events fired" in out

    def test_event_mismatch_exits_one(self, tmp_path, capsys):
        script = tmp_path / "bad_expect.csv"
        script.write_text(
            "wp,0,0,0,0,1,0,0,0,1,hold,0\n"
            "wp,1000000,0,0,0,1,0,0,0,1,hold,0\n"
            "expect,500000,pick\n"
        )
        assert run_cli("operate", "--script", str(script), "--mode", "fast") == 1
        assert "MISMATCH" in capsys.readouterr().err


class TestBenchIk:
    def test_small_bench_passes(self, capsys):
        from armteleop import core as kin_core

        code = run_cli("bench-ik", "--n", "50", "--seed", "3")
        out = capsys.readouterr().out
        assert "success" in out and "median" in out
        if kin_core.BACKEND == "compiled":
            assert code == 0
        else:
            # the pure fallback may honestly miss the 1 ms gate
            assert code in (0, 1)

    def test_unreachable_batch(self, capsys):
        assert run_cli("bench-ik", "--n", "20", "--unreachable") == 0
        assert "20/20" in capsys.readouterr().out

    def test_unknown_impl_rejected(self, capsys):
        with pytest.raises(SystemExit):
            run_cli("bench-ik", "--impl", "gpu")


@pytest.mark.slow
class TestThreeProcessComposition:
    def test_handshake_within_two_seconds(self, tmp_path):
        tcp = free_port()
        cmd = free_port()
        fb = free_port()
        dev = free_port()
        http = free_port()
        env_args = dict(stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)
        procs = []
        try:
            procs.append(
                subprocess.Popen(
                    [sys.executable, "-m", "armteleop.cli", "device-emu", "--port", str(dev),
                     "--results", str(tmp_path / "results.csv")],
                    **env_args,
                )
            )
            procs.append(
                subprocess.Popen(
                    [sys.executable, "-m", "armteleop.cli", "sim", "--listen", str(cmd),
                     "--feedback", str(fb)],
                    **env_args,
                )
            )
            procs.append(
                subprocess.Popen(
                    [sys.executable, "-m", "armteleop.cli", "serve", "--tcp-port", str(tcp),
                     "--cmd-port", str(cmd), "--feedback-port", str(fb),
                     "--device-port", str(dev), "--http-port", str(http)],
                    **env_args,
                )
            )
            # wait for the server socket, then time the handshake itself
            deadline = time.monotonic() + 15.0
            conn = None
            while time.monotonic() < deadline:
                try:
                    conn = socket.create_connection(("127.0.0.1", tcp), timeout=0.2)
                    break
                except OSError:
                    time.sleep(0.05)
            assert conn is not None, "server never opened its port"
            t0 = time.monotonic()
            conn.sendall(encode(SessionHello()))
            decoder = StreamDecoder()
            conn.settimeout(2.0)
            accepted = False
            while time.monotonic() - t0 < 2.0 and not accepted:
                for msg in decoder.feed(conn.recv(65536)):
                    if isinstance(msg, SessionAccept):
                        accepted = True
            assert accepted, "no session accept within 2 s"
            conn.close()
        finally:
            for p in procs:
                p.terminate()
            for p in procs:
                try:
                    p.wait(timeout=5)
                except subprocess.TimeoutExpired:
                    p.kill()
