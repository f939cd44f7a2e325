"""Simulated host services and vulnerability semantics.

Services answer probes and application requests with protocol-typical packet
sizes; RCE is reduced to "the right request yields a command session", either
via an exploitable command parameter (web) or known credentials (SSH/Telnet).
Privilege escalation succeeds only through a configured path (SUID binary or
sudoers script). Exploit success is deterministic given the configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

from .network import NetworkFabric, Packet

USER_LEVELS = {"www-data": 0, "operator": 0, "root": 1}
PE_METHODS = ("suid_binary", "sudoers_script")

PROBE_LEN = 60
REFUSAL_LEN = 54
BANNER_LEN = 60
HTTP_REQUEST_LEN = 300
HTTP_RESPONSE_LEN = 500
LOGIN_LENS = {
    "SSH": (160, 180, 140, 120),
    "TELNET": (110, 130, 100, 120),
}
SESSION_CMD_LENS = {"HTTP": (300, 500), "SSH": (120, 160), "TELNET": (110, 150)}
KEEPALIVE_LENS = {"SSH": (160, 120), "TELNET": (110, 100)}


class HostConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RceVuln:
    method: str  # cmd_param | known_credentials
    executing_user: str


@dataclass(frozen=True)
class HostService:
    port: int
    protocol: str
    banner: str = ""
    rce: RceVuln | None = None

    def __post_init__(self):
        if not 1 <= self.port <= 65535:
            raise HostConfigError(f"port {self.port} out of range")
        if self.rce is not None:
            if self.rce.method not in ("cmd_param", "known_credentials"):
                raise HostConfigError(f"unknown rce method {self.rce.method!r}")
            if self.rce.executing_user not in USER_LEVELS:
                raise HostConfigError(f"unknown user {self.rce.executing_user!r}")


@dataclass
class Session:
    host_id: str
    session_id: str
    user: str
    established_via: tuple[int, str]
    open: bool = True


USER_IDS = {"www-data": 33, "operator": 1000, "root": 0}


class SimHost:
    """Application handler for one host node: services, sessions, PE paths."""

    def __init__(
        self,
        node_id: str,
        address: str,
        services: dict[int, HostService] | None = None,
        pe_paths: frozenset[str] | set[str] = frozenset(),
    ):
        for method in pe_paths:
            if method not in PE_METHODS:
                raise HostConfigError(f"unknown pe path {method!r}")
        ports = services or {}
        for port, svc in ports.items():
            if port != svc.port:
                raise HostConfigError(f"service keyed {port} but declares port {svc.port}")
        self.node_id = node_id
        self.address = address
        self.services = dict(ports)
        self.pe_paths = frozenset(pe_paths)
        self.sessions: dict[str, Session] = {}
        self.silenced = False
        self._session_counter = 0
        self.scada_app = None  # RtuApp or MtuApp, set by scenario wiring
        self.escalation_attempts: list[tuple[str, str, bool]] = []

    # -- inbound -------------------------------------------------------------

    def on_packet(self, fabric: NetworkFabric, packet: Packet) -> None:
        if self.silenced:
            return
        kind = packet.payload.get("type")
        if kind in ("telemetry_report", "telemetry_ack", "interrogation"):
            if self.scada_app is not None:
                self.scada_app.on_telemetry(fabric, packet)
            return
        if kind == "probe":
            self._on_probe(fabric, packet)
        elif kind == "http_get":
            self._on_http_get(fabric, packet)
        elif kind == "keepalive":
            self._on_keepalive(fabric, packet)
        elif kind == "rce_attempt":
            self._on_rce_attempt(fabric, packet)
        elif kind == "login_hello":
            self._on_login_hello(fabric, packet)
        elif kind == "login_auth":
            self._on_login_auth(fabric, packet)
        elif kind == "session_cmd":
            self._on_session_cmd(fabric, packet)
        # anything else is silently dropped: not addressed to a modeled service

    def _reply(self, fabric, packet, protocol, length, payload) -> None:
        # Deliberately not guarded by `silenced`: the confirmation of the very
        # command that silenced the host still goes out; everything after is
        # cut off at the on_packet entry guard.
        fabric.send_app_message(self.node_id, packet.src, protocol, length, payload, self.node_id)

    def _refuse(self, fabric, packet, port: int) -> None:
        self._reply(
            fabric, packet, "OTHER", REFUSAL_LEN, {"type": "refused", "port": port}
        )

    def _on_probe(self, fabric, packet) -> None:
        port = packet.payload["port"]
        svc = self.services.get(port)
        if svc is None:
            self._reply(
                fabric, packet, "OTHER", REFUSAL_LEN,
                {"type": "probe_reply", "port": port, "state": "closed"},
            )
        else:
            self._reply(
                fabric, packet, svc.protocol, BANNER_LEN,
                {"type": "probe_reply", "port": port, "state": "open",
                 "service": svc.protocol, "banner": svc.banner},
            )

    def _on_http_get(self, fabric, packet) -> None:
        port = packet.payload.get("port", 80)
        svc = self.services.get(port)
        if svc is None or svc.protocol != "HTTP":
            self._refuse(fabric, packet, port)
            return
        self._reply(
            fabric, packet, "HTTP", HTTP_RESPONSE_LEN,
            {"type": "http_response", "status": 200, "port": port},
        )

    def _on_keepalive(self, fabric, packet) -> None:
        port = packet.payload.get("port", 22)
        svc = self.services.get(port)
        if svc is None or svc.protocol not in KEEPALIVE_LENS:
            self._refuse(fabric, packet, port)
            return
        self._reply(
            fabric, packet, svc.protocol, KEEPALIVE_LENS[svc.protocol][1],
            {"type": "keepalive_ack", "port": port},
        )

    # -- remote code execution paths ------------------------------------------

    def _on_rce_attempt(self, fabric, packet) -> None:
        """Command-parameter exploit against a web service, single exchange."""
        port = packet.payload["port"]
        svc = self.services.get(port)
        if svc is None:
            self._refuse(fabric, packet, port)
            return
        if svc.rce is None or svc.rce.method != "cmd_param":
            self._reply(
                fabric, packet, svc.protocol, HTTP_RESPONSE_LEN,
                {"type": "rce_result", "ok": False, "port": port, "error": "not exploitable"},
            )
            return
        session = self._open_session(svc)
        output = self.exec_command(session, packet.payload.get("command", "whoami"))
        self._reply(
            fabric, packet, svc.protocol, HTTP_RESPONSE_LEN,
            {"type": "rce_result", "ok": True, "port": port,
             "session": session.session_id, "output": output},
        )

    def _on_login_hello(self, fabric, packet) -> None:
        port = packet.payload["port"]
        svc = self.services.get(port)
        if svc is None:
            self._refuse(fabric, packet, port)
            return
        lens = LOGIN_LENS.get(svc.protocol)
        if lens is None:
            self._reply(
                fabric, packet, svc.protocol, REFUSAL_LEN,
                {"type": "login_challenge", "ok": False, "port": port},
            )
            return
        self._reply(
            fabric, packet, svc.protocol, lens[1],
            {"type": "login_challenge", "ok": True, "port": port},
        )

    def _on_login_auth(self, fabric, packet) -> None:
        port = packet.payload["port"]
        svc = self.services.get(port)
        if svc is None:
            self._refuse(fabric, packet, port)
            return
        lens = LOGIN_LENS.get(svc.protocol, LOGIN_LENS["SSH"])
        if svc.rce is None or svc.rce.method != "known_credentials":
            self._reply(
                fabric, packet, svc.protocol, lens[3],
                {"type": "login_result", "ok": False, "port": port, "error": "auth failed"},
            )
            return
        session = self._open_session(svc)
        self._reply(
            fabric, packet, svc.protocol, lens[3],
            {"type": "login_result", "ok": True, "port": port,
             "session": session.session_id, "output": session.user},
        )

    def _open_session(self, svc: HostService) -> Session:
        self._session_counter += 1
        session = Session(
            host_id=self.node_id,
            session_id=f"{self.node_id}-s{self._session_counter}",
            user=svc.rce.executing_user,
            established_via=(svc.port, svc.protocol),
        )
        self.sessions[session.session_id] = session
        return session

    # -- command execution inside a session ------------------------------------

    def _on_session_cmd(self, fabric, packet) -> None:
        sid = packet.payload.get("session")
        session = self.sessions.get(sid)
        proto = packet.payload.get("protocol", "HTTP")
        out_len = SESSION_CMD_LENS.get(proto, SESSION_CMD_LENS["HTTP"])[1]
        if session is None or not session.open:
            self._reply(
                fabric, packet, proto, out_len,
                {"type": "cmd_output", "ok": False, "error": "session closed"},
            )
            return
        output = self.exec_command(session, packet.payload.get("command", ""))
        self._reply(
            fabric, packet, proto, out_len,
            {"type": "cmd_output", "ok": True, "session": sid, "output": output},
        )

    def exec_command(self, session: Session, command: str) -> str:
        """Interpret the small fixed command set; deterministic output."""
        if not session.open:
            return "error: session closed"
        parts = command.split()
        if not parts:
            return "error: empty command"
        name = parts[0]
        if name == "whoami":
            return session.user
        if name == "id":
            uid = USER_IDS[session.user]
            return f"uid={uid}({session.user})"
        if name == "list_pe":
            return " ".join(sorted(self.pe_paths)) if self.pe_paths else "none"
        if name == "escalate":
            method = parts[1] if len(parts) > 1 else ""
            return self.escalate(session, method)
        if name == "stop_service":
            return self._compromise_dos(session)
        if name == "spoof":
            return self._compromise_manipulate(session, parts[1:])
        return f"error: unknown command {name!r}"

    def escalate(self, session: Session, method: str) -> str:
        """Try one PE path; the session user only ever moves up to root."""
        if session.user == "root":
            self.escalation_attempts.append((session.session_id, method, True))
            return "root"
        ok = method in self.pe_paths
        self.escalation_attempts.append((session.session_id, method, ok))
        if ok:
            session.user = "root"
            return "root"
        return "denied"

    # -- compromise hooks (root required) ---------------------------------------

    def _compromise_dos(self, session: Session) -> str:
        if session.user != "root":
            return "permission denied"
        if self.scada_app is None or not hasattr(self.scada_app, "apply_dos"):
            return "error: no telemetry service"
        self.scada_app.apply_dos()
        self.silence()
        return "service stopped"

    def _compromise_manipulate(self, session: Session, args: list[str]) -> str:
        if session.user != "root":
            return "permission denied"
        if self.scada_app is None or not hasattr(self.scada_app, "apply_manipulate"):
            return "error: no telemetry service"
        # args like  P_kW=0.5,0  quantity=scale,offset
        transform: dict[str, tuple[float, float]] = {}
        for arg in args:
            quantity, _, rest = arg.partition("=")
            scale_s, _, offset_s = rest.partition(",")
            transform[quantity] = (float(scale_s), float(offset_s or 0.0))
        self.scada_app.apply_manipulate(transform)
        return "spoofing active"

    def silence(self) -> None:
        """DoS state: the host emits nothing from now on."""
        self.silenced = True
