"""Fetch client against a local HTTP server that mimics an aggregated-trade
history endpoint."""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import pytest

from ticklstm.errors import GapDetected, HttpError, InvalidConfig, RateLimited
from ticklstm.fetch import API_URL_ENV, ExchangeConfig, TradeFetcher, fetch_trades
from ticklstm.trades import synth_trades


class MockExchange:
    def __init__(self, trades, fail_first=0, status=429):
        self.records = [{"a": int(t.trade_id), "p": repr(t.price), "q": repr(t.amount),
                         "T": int(t.timestamp), "m": bool(t.is_buyer_maker)} for t in trades]
        self.fail_first = fail_first
        self.status = status
        self.calls = []

    def handler(self):
        ex = self

        class H(BaseHTTPRequestHandler):
            def log_message(self, *a):
                pass

            def do_GET(self):
                q = parse_qs(urlparse(self.path).query)
                ex.calls.append(q)
                if len(ex.calls) <= ex.fail_first:
                    self.send_response(ex.status)
                    self.send_header("Retry-After", "0")
                    self.end_headers()
                    return
                start = int(q["startTime"][0])
                limit = int(q["limit"][0])
                page = [r for r in ex.records if r["T"] >= start][:limit]
                body = json.dumps(page).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

        return H


@pytest.fixture
def serve():
    servers = []

    def start(exchange):
        srv = ThreadingHTTPServer(("127.0.0.1", 0), exchange.handler())
        threading.Thread(target=srv.serve_forever, daemon=True).start()
        servers.append(srv)
        return f"http://127.0.0.1:{srv.server_address[1]}"

    yield start
    for s in servers:
        s.shutdown()
        s.server_close()


def _cfg(**kw):
    return ExchangeConfig(**{"min_delay_s": 0.0, "backoff_base_s": 0.0, **kw})


def _no_sleep(_):
    pass


@pytest.fixture
def six():
    return synth_trades(5, 6)


class TestFetch:
    def test_empty_range(self, serve, six):
        url = serve(MockExchange(six))
        t = int(six.timestamp[0])
        assert len(fetch_trades(url, "X", t, t, _cfg(limit=3), sleep=_no_sleep)) == 0

    def test_two_pages(self, serve, six):
        ex = MockExchange(six)
        url = serve(ex)
        got = fetch_trades(url, "X", int(six.timestamp[0]), int(six.timestamp[-1]) + 1,
                           _cfg(limit=3), sleep=_no_sleep)
        assert got.trade_id.tolist() == six.trade_id.tolist()
        assert got.price.tolist() == six.price.tolist()
        assert len(ex.calls) >= 2

    def test_rate_limit_then_success(self, serve, six):
        clean = MockExchange(six)
        plain = fetch_trades(serve(clean), "X", 0, 2**62, _cfg(limit=3), sleep=_no_sleep)
        limited = MockExchange(six, fail_first=2)
        got = fetch_trades(serve(limited), "X", 0, 2**62, _cfg(limit=3), sleep=_no_sleep)
        assert got == plain
        assert len(limited.calls) == len(clean.calls) + 2

    def test_single_trade_pages_cannot_advance(self, serve, six):
        url = serve(MockExchange(six))
        with pytest.raises(GapDetected):
            fetch_trades(url, "X", 0, 2**62, _cfg(limit=1), sleep=_no_sleep)

    def test_rate_limit_exhausted(self, serve, six):
        url = serve(MockExchange(six, fail_first=100, status=418))
        with pytest.raises(RateLimited):
            fetch_trades(url, "X", 0, 2**62, _cfg(limit=3, max_retries=2), sleep=_no_sleep)

    def test_http_error(self, serve, six):
        url = serve(MockExchange(six, fail_first=1, status=500))
        with pytest.raises(HttpError) as exc:
            fetch_trades(url, "X", 0, 2**62, _cfg(), sleep=_no_sleep)
        assert exc.value.status == 500

    @pytest.mark.parametrize("limit", [2, 3, 7, 50, 1000])
    def test_page_size_invariance(self, serve, limit):
        trades = synth_trades(9, 120)
        url = serve(MockExchange(trades))
        lo, hi = int(trades.timestamp[10]), int(trades.timestamp[100])
        got = fetch_trades(url, "X", lo, hi, _cfg(limit=limit), sleep=_no_sleep)
        assert got.trade_id.tolist() == trades.trade_id[10:100].tolist()

    def test_range_is_half_open(self, serve, six):
        url = serve(MockExchange(six))
        got = fetch_trades(url, "X", int(six.timestamp[1]), int(six.timestamp[4]),
                           _cfg(limit=2), sleep=_no_sleep)
        assert got.trade_id.tolist() == six.trade_id[1:4].tolist()

    def test_full_page_on_one_timestamp(self, serve):
        ts = synth_trades(1, 4)
        ex = MockExchange(ts)
        for r in ex.records:
            r["T"] = ex.records[0]["T"]
        url = serve(ex)
        with pytest.raises(GapDetected):
            fetch_trades(url, "X", 0, 2**62, _cfg(limit=2), sleep=_no_sleep)


class TestCacheAndThrottle:
    def test_cache_makes_rerun_offline(self, serve, six, tmp_path):
        ex = MockExchange(six)
        url = serve(ex)
        cfg = _cfg(limit=3, cache_dir=str(tmp_path))
        first = fetch_trades(url, "X", 0, 2**62, cfg, sleep=_no_sleep)
        n_calls = len(ex.calls)
        again = fetch_trades(url, "X", 0, 2**62, cfg, sleep=_no_sleep)
        assert again == first
        assert len(ex.calls) == n_calls
        assert sorted(p.name for p in (tmp_path / "X").iterdir())[0].endswith("_3.json")

    def test_min_delay_between_requests(self, serve, six):
        url = serve(MockExchange(six))
        now = [0.0]
        slept = []

        def sleep(s):
            slept.append(s)
            now[0] += s

        f = TradeFetcher(_cfg(limit=2, min_delay_s=0.5), sleep=sleep, clock=lambda: now[0],
                         base_url=url)
        f.fetch("X", 0, 2**62)
        assert f.requests_made >= 3
        assert slept and all(abs(s - 0.5) < 1e-12 for s in slept)

    def test_env_override(self, monkeypatch):
        monkeypatch.setenv(API_URL_ENV, "http://example.invalid/")
        assert ExchangeConfig().resolved_base_url() == "http://example.invalid"
        assert TradeFetcher(base_url="http://explicit").base_url == "http://explicit"

    def test_config_file(self, tmp_path):
        p = tmp_path / "ex.json"
        p.write_text(json.dumps({"limit": 500, "field_id": "id"}))
        assert ExchangeConfig.from_file(p).limit == 500
        p.write_text(json.dumps({"bogus": 1}))
        with pytest.raises(InvalidConfig):
            ExchangeConfig.from_file(p)
