"""Operator command line.

Exit codes: 0 success, 1 request/input error, 2 usage error or port in use,
3 corrupt journal, 4 service unreachable, 5 job not running.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
from typing import Optional

from . import errors
from .ids import parse_ts

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_JOURNAL, EXIT_CONNECT, EXIT_NOT_RUNNING = 0, 1, 2, 3, 4, 5

log = logging.getLogger("jamaica")


class CliExit(Exception):
    def __init__(self, code: int, message: str = ""):
        super().__init__(message)
        self.code, self.message = code, message


class Client:
    """Thin JSON-over-HTTP client for a running service."""

    def __init__(self, addr: str, timeout: float = 30.0):
        import requests

        self.base = addr if addr.startswith("http") else f"http://{addr}"
        self.session = requests.Session()
        self.timeout = timeout

    def request(self, method: str, path: str, *, body=None, data: Optional[bytes] = None,
                params: Optional[dict] = None, ok=(200, 201, 202, 204)):
        import requests

        headers = {"Content-Type": "application/json"}
        if body is not None:
            data = json.dumps(body).encode("utf-8")
        try:
            resp = self.session.request(method, self.base + path, data=data, params=params,
                                        headers=headers, timeout=self.timeout)
        except requests.ConnectionError as exc:
            raise CliExit(EXIT_CONNECT, f"cannot reach service at {self.base}: {exc}") from None
        payload = resp.json() if resp.content else None
        if resp.status_code not in ok:
            raise CliExit(EXIT_ERROR, json.dumps(payload))
        return payload

    def get(self, path, **kw):
        return self.request("GET", path, **kw)

    def post(self, path, body=None, **kw):
        return self.request("POST", path, body=body, **kw)


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=False))


def _load_json_file(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, ValueError) as exc:
        raise CliExit(EXIT_ERROR, f"cannot read {path}: {exc}") from None


# -- serve ----------------------------------------------------------------------

def cmd_serve(args) -> int:
    from .api import App, make_server, parse_addr
    from .service import Service

    host, port = parse_addr(args.addr)
    callback = args.callback_url or f"http://{host}:{port}/v1/notify"
    try:
        service = Service(args.data_dir, callback_url=callback)
    except errors.JournalCorrupt as exc:
        print(f"journal corrupt at line {exc.line}: {exc.message}", file=sys.stderr)
        return EXIT_JOURNAL
    try:
        server = make_server(App(service), args.addr)
    except OSError as exc:
        print(f"cannot bind {args.addr}: {exc}", file=sys.stderr)
        service.close()
        return EXIT_USAGE
    service.subscriptions.start()

    def _term(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, _term)
    log.info("listening on %s (data dir %s)", args.addr, args.data_dir)
    print(f"listening on http://{host}:{server.server_address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        service.close()
    return EXIT_OK


# -- synth / report ----------------------------------------------------------------

def cmd_synth(args) -> int:
    from .synth import SynthSpec, write

    spec = SynthSpec(n_train=args.n_train, n_stream=args.n_stream,
                     nominal_band=tuple(args.band), frac_negative=args.frac_negative,
                     frac_high=args.frac_high, seed=args.seed, limit=args.limit,
                     sensors=args.sensors)
    try:
        train, stream = write(spec, args.out)
    except errors.BadSpec as exc:
        raise CliExit(EXIT_USAGE, f"bad synth spec: {exc.message}") from None
    _print({"train": str(train), "stream": str(stream), "n_train": spec.n_train,
            "n_stream": spec.n_stream, "n_negative": spec.n_negative, "n_high": spec.n_high})
    return EXIT_OK


def _report_values(args) -> list[float]:
    from .ingest import read_archive

    if args.source:
        try:
            return [o.value for o in read_archive(args.source)]
        except FileNotFoundError:
            raise CliExit(EXIT_ERROR, f"no such file: {args.source}") from None
        except errors.BadRow as exc:
            raise CliExit(EXIT_ERROR, exc.message) from None
    client = Client(args.addr)
    params = {"tag": args.tag, "limit": 1000, "offset": 0}
    if args.domain:
        params["domain"] = args.domain
    values = []
    while True:
        page = client.get("/v1/annotations", params=params)
        values.extend(a["numeric_value"] for a in page["items"] if a["numeric_value"] is not None)
        params["offset"] += len(page["items"])
        if not page["items"] or params["offset"] >= page["total"]:
            return values


def cmd_report(args) -> int:
    from .report import EmptySource, histogram, summary

    band = tuple(args.band) if args.band else None
    values = _report_values(args)
    try:
        if args.kind == "summary":
            _print(summary(values, band))
            return EXIT_OK
        rep = histogram(values, args.bins, band, tuple(args.range) if args.range else None)
    except EmptySource as exc:
        raise CliExit(EXIT_ERROR, exc.message) from None
    if args.format == "csv":
        sys.stdout.write(rep.to_csv())
        print(json.dumps({"total": rep.total, "below": rep.below, "above": rep.above}),
              file=sys.stderr)
    else:
        sys.stdout.write(rep.to_text())
    return EXIT_OK


# -- replay ------------------------------------------------------------------------

def _tag_totals(client: Client, tag_ids) -> dict[str, int]:
    return {t: client.get("/v1/annotations", params={"tag": t, "limit": 1})["total"]
            for t in tag_ids}


def run_replay(addr: str, archive: str, job_id: str, rate: float = 0.0,
               batch_size: int = 1000, time_compression: Optional[float] = None) -> dict:
    """Stream an archive into a running service and report what it produced."""
    from .ingest import ReplaySpec, replay, serialize_observations

    client = Client(addr)
    job = client.request("GET", f"/v1/jobs/{job_id}")
    if job["state"] != "running":
        raise CliExit(EXIT_NOT_RUNNING, f"job {job_id} is {job['state']}, not running")
    domain = client.get(f"/v1/tagdomains/{job['tag_domain_id']}")
    names = {t["id"]: t["name"] for t in domain["tags"]}
    before = _tag_totals(client, names)
    ingested_before = client.get("/v1/metrics")["observations_ingested"]
    sent = {"accepted": 0, "skipped": 0}

    def dispatch(batch):
        reply = client.post("/v1/observations", data=serialize_observations(batch))
        sent["accepted"] += reply["accepted"]
        sent["skipped"] += reply["skipped"]
        return []

    try:
        report = replay(ReplaySpec(archive, rate, time_compression), dispatch, batch_size)
    except FileNotFoundError:
        raise CliExit(EXIT_ERROR, f"no such file: {archive}") from None
    except errors.BadRow as exc:
        raise CliExit(EXIT_ERROR, f"{archive}: {exc.message}") from None
    after = _tag_totals(client, names)
    out = report.to_dict()
    out["annotations"] = {names[t]: after[t] - before[t] for t in names}
    out["accepted"], out["skipped"] = sent["accepted"], sent["skipped"]
    out["ingested"] = client.get("/v1/metrics")["observations_ingested"] - ingested_before
    out["job_id"] = job_id
    return out


def cmd_replay(args) -> int:
    _print(run_replay(args.addr, args.archive, args.job, args.rate, args.batch_size,
                      args.time_compression))
    return EXIT_OK


# -- resource commands ----------------------------------------------------------------

def cmd_job(args) -> int:
    client = Client(args.addr)
    action = args.action
    if action == "create":
        if not args.file:
            raise CliExit(EXIT_USAGE, "job create needs -f <json>")
        _print(client.post("/v1/jobs", _load_json_file(args.file)))
    elif action == "list":
        _print(client.get("/v1/jobs", params={"limit": 1000}))
    else:
        if not args.job_id:
            raise CliExit(EXIT_USAGE, f"job {action} needs a job id")
        path = f"/v1/jobs/{args.job_id}"
        if action == "get":
            _print(client.get(path))
        elif action == "delete":
            client.request("DELETE", path)
        elif action in ("start", "stop"):
            _print(client.post(f"{path}/{action}"))
        elif action == "train":
            _print(client.post(f"{path}/train", _training_body(args)))
    return EXIT_OK


def _training_body(args) -> dict:
    from .ids import format_ts
    from .ingest import read_archive

    if args.csv:
        try:
            rows = read_archive(args.csv)
        except (FileNotFoundError, errors.BadRow) as exc:
            raise CliExit(EXIT_ERROR, str(exc)) from None
        return {"samples": [{"value": o.value, "timestamp": format_ts(o.timestamp)}
                            for o in rows]}
    if args.file:
        return _load_json_file(args.file)
    raise CliExit(EXIT_USAGE, "job train needs -f <json> or --csv <archive>")


def cmd_domain(args) -> int:
    client = Client(args.addr)
    if args.action == "create":
        if not args.file:
            raise CliExit(EXIT_USAGE, "domain create needs -f <json>")
        _print(client.post("/v1/tagdomains", _load_json_file(args.file)))
    else:
        _print(client.get("/v1/tagdomains", params={"limit": 1000}))
    return EXIT_OK


def cmd_annotations(args) -> int:
    client = Client(args.addr)
    params = {k: v for k, v in {
        "entity": args.entity, "tag": args.tag, "domain": args.domain,
        "from": args.time_from, "to": args.time_to, "bbox": args.bbox,
        "offset": args.offset, "limit": args.limit}.items() if v is not None}
    _print(client.get("/v1/annotations", params=params))
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------

def _positive_int(text: str) -> int:
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return val


def _rfc3339(text: str) -> str:
    try:
        parse_ts(text)
    except ValueError:
        raise argparse.ArgumentTypeError("must be an RFC 3339 timestamp") from None
    return text


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jamaica", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--addr", default=os.environ.get("JAMAICA_ADDR", "127.0.0.1:8080"),
                   help="service address host:port (env JAMAICA_ADDR)")
    p.add_argument("--data-dir", default=os.environ.get("JAMAICA_DATA_DIR", "./data"),
                   help="journal directory (env JAMAICA_DATA_DIR)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("serve", help="run the annotation service")
    s.add_argument("--callback-url", default=os.environ.get("JAMAICA_CALLBACK_URL"),
                   help="URL brokers should POST notifications to")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("synth", help="generate the synthetic PM10 experiment")
    s.add_argument("--out", required=True, help="output directory for train.csv/stream.csv")
    s.add_argument("--n-train", type=int, default=1000)
    s.add_argument("--n-stream", type=int, default=40000)
    s.add_argument("--band", type=float, nargs=2, default=[5.0, 45.0], metavar=("LOW", "HIGH"))
    s.add_argument("--frac-negative", type=float, default=0.05)
    s.add_argument("--frac-high", type=float, default=0.03)
    s.add_argument("--limit", type=float, default=50.0,
                   help="high faults are drawn above this value")
    s.add_argument("--sensors", type=int, default=10)
    s.add_argument("--seed", type=int, default=42)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("replay", help="stream an archive CSV into a running service")
    s.add_argument("archive")
    s.add_argument("--job", required=True, help="job whose output is reported")
    s.add_argument("--rate", type=float, default=0.0, help="observations/second, 0 = unpaced")
    s.add_argument("--time-compression", type=float, default=None)
    s.add_argument("--batch-size", type=_positive_int, default=1000)
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("report", help="histogram or summary of archive/annotation values")
    s.add_argument("kind", choices=["histogram", "summary"])
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--source", help="archive CSV")
    src.add_argument("--tag", help="annotation tag id (queries the service)")
    s.add_argument("--domain")
    s.add_argument("--bins", type=_positive_int, default=20)
    s.add_argument("--band", type=float, nargs=2, metavar=("LOW", "HIGH"))
    s.add_argument("--range", type=float, nargs=2, metavar=("LOW", "HIGH"))
    s.add_argument("--format", choices=["csv", "text"], default="csv")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("job", help="manage annotation jobs")
    s.add_argument("action", choices=["create", "get", "train", "start", "stop", "list", "delete"])
    s.add_argument("job_id", nargs="?")
    s.add_argument("-f", "--file", help="JSON document (job spec or training batch)")
    s.add_argument("--csv", help="training archive CSV (job train)")
    s.set_defaults(func=cmd_job)

    s = sub.add_parser("domain", help="manage tag domains")
    s.add_argument("action", choices=["create", "list"])
    s.add_argument("-f", "--file")
    s.set_defaults(func=cmd_domain)

    s = sub.add_parser("annotations", help="query annotations")
    s.add_argument("action", choices=["query"])
    s.add_argument("--entity")
    s.add_argument("--tag")
    s.add_argument("--domain")
    s.add_argument("--from", dest="time_from", type=_rfc3339)
    s.add_argument("--to", dest="time_to", type=_rfc3339)
    s.add_argument("--bbox", help="minLon,minLat,maxLon,maxLat")
    s.add_argument("--offset", type=int)
    s.add_argument("--limit", type=int)
    s.set_defaults(func=cmd_annotations)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliExit as exc:
        if exc.message:
            print(exc.message, file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
