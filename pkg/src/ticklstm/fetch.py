"""Paginated REST client for exchange aggregated-trade history.

The endpoint is expected to answer ``GET <base_url><path>?symbol=..&startTime=..&limit=..``
with a JSON array of trade records, oldest first. Query parameter names and
the record field mapping come from :class:`ExchangeConfig`, so any exchange
with a start-time keyed history endpoint can be targeted.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np
import requests

from .errors import GapDetected, HttpError, InvalidConfig, RateLimited
from .trades import TradeStream

logger = logging.getLogger(__name__)

API_URL_ENV = "TICKLSTM_API_URL"


@dataclass
class ExchangeConfig:
    base_url: str = "https://api.binance.com"
    path: str = "/api/v3/aggTrades"
    symbol_param: str = "symbol"
    start_param: str = "startTime"
    end_param: str = ""
    limit_param: str = "limit"
    limit: int = 1000
    field_id: str = "a"
    field_price: str = "p"
    field_amount: str = "q"
    field_timestamp: str = "T"
    field_maker: str = "m"
    min_delay_s: float = 0.25
    max_retries: int = 5
    backoff_base_s: float = 1.0
    backoff_cap_s: float = 60.0
    timeout_s: float = 30.0
    check_id_continuity: bool = False
    cache_dir: str = ""

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "ExchangeConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise InvalidConfig(f"unknown exchange config keys: {sorted(unknown)}")
        return cls(**raw)

    def resolved_base_url(self) -> str:
        return os.environ.get(API_URL_ENV, self.base_url).rstrip("/")


class TradeFetcher:
    """Single-connection history client with page cache and backoff.

    Only one request is ever in flight; consecutive requests are spaced by
    at least ``min_delay_s``. Raw pages are stored under
    ``cache_dir/<instrument>/<start>_<limit>.json`` and never rewritten.
    """

    def __init__(self, config: ExchangeConfig | None = None,
                 session: requests.Session | None = None,
                 sleep: Callable[[float], None] = time.sleep,
                 clock: Callable[[], float] = time.monotonic,
                 base_url: str = ""):
        self.config = config or ExchangeConfig()
        self.base_url = base_url.rstrip("/") or self.config.resolved_base_url()
        if self.config.limit <= 0:
            raise InvalidConfig("limit must be positive")
        self.session = session or requests.Session()
        self._sleep = sleep
        self._clock = clock
        self._last_request: float | None = None
        self.requests_made = 0

    def _cache_path(self, instrument: str, start_ms: int) -> Path | None:
        if not self.config.cache_dir:
            return None
        return Path(self.config.cache_dir) / instrument / f"{start_ms}_{self.config.limit}.json"

    def _throttle(self) -> None:
        if self._last_request is not None:
            wait = self.config.min_delay_s - (self._clock() - self._last_request)
            if wait > 0:
                self._sleep(wait)
        self._last_request = self._clock()

    def _request(self, instrument: str, start_ms: int, end_ms: int) -> list:
        cfg = self.config
        url = self.base_url + cfg.path
        params = {cfg.symbol_param: instrument, cfg.start_param: start_ms,
                  cfg.limit_param: cfg.limit}
        if cfg.end_param:
            params[cfg.end_param] = end_ms - 1
        attempt = 0
        while True:
            self._throttle()
            self.requests_made += 1
            resp = self.session.get(url, params=params, timeout=cfg.timeout_s)
            if resp.status_code in (418, 429):
                if attempt >= cfg.max_retries:
                    raise RateLimited(f"still rate limited after {attempt} retries")
                delay = min(cfg.backoff_cap_s, cfg.backoff_base_s * 2 ** attempt)
                retry_after = resp.headers.get("Retry-After")
                if retry_after and retry_after.isdigit():
                    delay = min(cfg.backoff_cap_s, max(delay, float(retry_after)))
                logger.warning("rate limited, sleeping %.1fs", delay)
                self._sleep(delay)
                attempt += 1
                continue
            if resp.status_code != 200:
                raise HttpError(resp.status_code, url)
            payload = resp.json()
            if not isinstance(payload, list):
                raise HttpError(resp.status_code, url + " (response is not a JSON array)")
            return payload

    def page(self, instrument: str, start_ms: int, end_ms: int) -> list:
        path = self._cache_path(instrument, start_ms)
        if path is not None and path.exists():
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        records = self._request(instrument, start_ms, end_ms)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(records, fh)
            os.replace(tmp, path)
        return records

    def _parse(self, rec: dict) -> tuple[int, int, float, float, bool]:
        cfg = self.config
        maker = rec[cfg.field_maker]
        if isinstance(maker, str):
            maker = maker.strip().lower() == "true"
        return (int(rec[cfg.field_id]), int(rec[cfg.field_timestamp]),
                float(rec[cfg.field_price]), float(rec[cfg.field_amount]), bool(maker))

    def fetch(self, instrument: str, start_ms: int, end_ms: int) -> TradeStream:
        if end_ms <= start_ms:
            return TradeStream.empty(instrument)
        limit = self.config.limit
        rows: dict[int, tuple] = {}
        cursor = start_ms
        last_id: int | None = None
        while cursor < end_ms:
            raw = self.page(instrument, cursor, end_ms)
            page = [self._parse(r) for r in raw]
            if not page:
                break
            for rec in page:
                tid, t = rec[0], rec[1]
                if start_ms <= t < end_ms and tid not in rows:
                    if (self.config.check_id_continuity and last_id is not None
                            and tid != last_id + 1):
                        raise GapDetected(f"trade ids jump from {last_id} to {tid}")
                    rows[tid] = rec
                    last_id = tid
            if len(page) < limit:
                break
            next_cursor = max(r[1] for r in page)
            if next_cursor <= cursor:
                raise GapDetected(
                    f"a full page of {limit} trades shares timestamp {cursor}; "
                    "raise the page limit to cover this range")
            cursor = next_cursor
        ordered = sorted(rows.values(), key=lambda r: (r[1], r[0]))
        if not ordered:
            return TradeStream.empty(instrument)
        cols = list(zip(*ordered))
        return TradeStream(np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.int64),
                           np.array(cols[2]), np.array(cols[3]), np.array(cols[4], dtype=bool),
                           instrument=instrument)


def fetch_trades(endpoint: str, instrument: str, start_ms: int, end_ms: int,
                 config: ExchangeConfig | None = None, **kwargs) -> TradeStream:
    """Fetch every trade with ``start_ms <= timestamp < end_ms``.

    ``endpoint`` overrides ``config.base_url`` when non-empty. Extra keyword
    arguments go to :class:`TradeFetcher` (``session``, ``sleep``).
    """
    return TradeFetcher(config, base_url=endpoint, **kwargs).fetch(instrument, start_ms, end_ms)
