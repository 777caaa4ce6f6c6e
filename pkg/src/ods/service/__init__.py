from .api import API_VERSION, ERROR_CODES, Api, Response
from .app import JobView, OdsService, RunTuner
from .client import ApiError, Client, TransportError
from .config import Config
from .monitor import MonitorSnapshot
from .server import OdsHttpServer

__all__ = ["API_VERSION", "ERROR_CODES", "Api", "Response", "JobView", "OdsService", "RunTuner", "ApiError",
           "Client", "TransportError", "Config", "MonitorSnapshot", "OdsHttpServer"]
