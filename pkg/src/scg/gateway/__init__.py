from .backend import MemorySink, TlsBackend, ack_message, fault_message
from .channels import ChannelInfo, LoopbackProvider, client_context, profile_from_ssl, server_context
from .config import BackendConfig, GatewayConfig, config_from_dict, load_config
from .service import Backoff, Gateway, Session, run, serve

__all__ = [
    "BackendConfig", "Backoff", "ChannelInfo", "Gateway", "GatewayConfig", "LoopbackProvider",
    "MemorySink", "Session", "TlsBackend", "ack_message", "client_context", "config_from_dict",
    "fault_message", "load_config", "profile_from_ssl", "run", "serve", "server_context",
]
