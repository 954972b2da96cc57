"""Web gateway for the browser console: /ws (JSON mirror of the wire
protocol), /model (DH table, limits, fences) and /metrics.

The gateway translates JSON objects to the same core entry points the
binary TCP channel uses; field names match the binary layout exactly
(docs/protocol.md).
"""

from __future__ import annotations

import asyncio
import queue
import threading

import uvicorn
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import HTMLResponse

from .protocol import (
    FieldError,
    HandshakeEvent,
    SessionHello,
    SessionResume,
    WaypointMsg,
    from_json,
    to_json,
)
from .shell import ServerShell

_INDEX = """<!doctype html>
<html><head><title>arm teleop server</title></head>
<body style="font-family: monospace">
<h3>teleoperation server</h3>
<ul>
<li><a href="/model">/model</a> - arm model, fences, zones</li>
<li><a href="/metrics">/metrics</a> - latency percentiles, cycle log</li>
<li>/ws - operator web-socket (JSON mirror of the wire protocol)</li>
</ul>
<p>Serve the browser console from frontend/ and point it here.</p>
</body></html>"""


def build_app(shell: ServerShell) -> FastAPI:
    app = FastAPI(title="armteleop", docs_url=None, redoc_url=None)
    # the console is typically served from a separate static host
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["GET"], allow_headers=["*"]
    )

    @app.get("/", response_class=HTMLResponse)
    def index():
        return _INDEX

    @app.get("/model")
    def model():
        return shell.model_dict()

    @app.get("/metrics")
    def metrics():
        return shell.metrics_dict()

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        sub: queue.Queue | None = None
        owns_session = False
        loop = asyncio.get_running_loop()
        try:
            while True:
                obj = await ws.receive_json()
                try:
                    msg = from_json(obj)
                except FieldError as e:
                    await ws.send_json({"type": "error", "message": str(e)})
                    continue
                if isinstance(msg, (SessionHello, SessionResume)):
                    event, reply = shell.handshake_json(msg)
                    await ws.send_json(to_json(reply))
                    if event in (HandshakeEvent.ACCEPTED_NEW, HandshakeEvent.RESUMED):
                        owns_session = True
                        break
                else:
                    await ws.send_json({"type": "error", "message": "handshake first"})
            sub = shell.states.subscribe()

            async def inbound():
                while True:
                    obj = await ws.receive_json()
                    try:
                        msg = from_json(obj)
                    except FieldError as e:
                        await ws.send_json({"type": "error", "message": str(e)})
                        continue
                    if isinstance(msg, WaypointMsg):
                        shell.submit_waypoint(msg)
                    elif isinstance(msg, (SessionHello, SessionResume)):
                        event, reply = shell.handshake_json(msg)
                        await ws.send_json(to_json(reply))

            def poll_state():
                try:
                    return sub.get(True, 0.25)
                except queue.Empty:
                    return None

            async def outbound():
                while True:
                    state = await loop.run_in_executor(None, poll_state)
                    if state is not None:
                        await ws.send_json(to_json(state))

            in_task = asyncio.create_task(inbound())
            out_task = asyncio.create_task(outbound())
            done, pending = await asyncio.wait(
                {in_task, out_task}, return_when=asyncio.FIRST_EXCEPTION
            )
            for task in pending:
                task.cancel()
            for task in done:
                exc = task.exception()
                if exc is not None and not isinstance(exc, WebSocketDisconnect):
                    raise exc
        except WebSocketDisconnect:
            pass
        finally:
            if sub is not None:
                shell.states.unsubscribe(sub)
            if owns_session:
                with shell.lock:
                    shell.core.disconnect(shell.now_us())

    return app


class GatewayServer:
    """uvicorn in a background thread with clean shutdown."""

    def __init__(self, shell: ServerShell, host: str = "127.0.0.1", port: int | None = None):
        self.app = build_app(shell)
        self._config = uvicorn.Config(
            self.app,
            host=host,
            port=port if port is not None else shell.cfg.http_port,
            log_level="warning",
            ws="auto",
        )
        self._server = uvicorn.Server(self._config)
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        servers = getattr(self._server, "servers", None)
        if servers:
            socks = servers[0].sockets
            if socks:
                return socks[0].getsockname()[1]
        return self._config.port

    def start(self):
        self._thread = threading.Thread(target=self._server.run, name="gateway", daemon=True)
        self._thread.start()
        import time

        deadline = time.monotonic() + 5.0
        while not self._server.started and time.monotonic() < deadline:
            time.sleep(0.02)
        if not self._server.started:
            raise RuntimeError("gateway failed to start")
        return self

    def stop(self):
        self._server.should_exit = True
        if self._thread is not None:
            self._thread.join(timeout=5)
