"""``ods`` command line.

Exit codes: 0 success, 1 validation or other client-side error, 2 transport
failure, 3 server-side failure.
"""
from __future__ import annotations

import json
import sys
from datetime import datetime
from pathlib import Path

import click

from ..errors import OdsError, ValidationError
from ..records import parse_any
from ..simnet import Scenario
from .client import ApiError, Client, TransportError
from .config import Config

EXIT_OK, EXIT_VALIDATION, EXIT_TRANSPORT, EXIT_SERVER = 0, 1, 2, 3


class Ctx:
    def __init__(self, config: Config, url: str, token: str, as_json: bool):
        self.config = config
        self.client = Client(url, token)
        self.as_json = as_json


def _emit(ctx: Ctx, envelope: dict, human) -> None:
    if ctx.as_json:
        click.echo(json.dumps(envelope, indent=2, sort_keys=True))
    else:
        human(envelope.get("data", {}))


def _table(rows, headers) -> None:
    rows = [[("" if c is None else str(c)) for c in r] for r in rows]
    widths = [max([len(h)] + [len(r[i]) for r in rows]) for i, h in enumerate(headers)]
    click.echo("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    for r in rows:
        click.echo("  ".join(c.ljust(w) for c, w in zip(r, widths)))


def _ts(ms) -> str:
    if ms is None:
        return "-"
    return datetime.fromtimestamp(ms / 1000).strftime("%Y-%m-%d %H:%M:%S")


def _params(p) -> str:
    return f"cc={p['cc']} p={p['p']} pp={p['pp']}" if isinstance(p, dict) else str(p or "-")


def _call(ctx: Ctx, fn, human) -> None:
    """Run an API call and map failures onto exit codes."""
    try:
        env = fn()
    except TransportError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_TRANSPORT)
    except ApiError as exc:
        if ctx.as_json:
            click.echo(json.dumps(exc.envelope, indent=2, sort_keys=True))
        else:
            err = exc.envelope.get("error", {})
            click.echo(f"error [{err.get('code')}]: {err.get('message')}", err=True)
        sys.exit(EXIT_SERVER if exc.status >= 500 else EXIT_VALIDATION)
    _emit(ctx, env, human)


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="INI config file.")
@click.option("--url", envvar="ODS_URL", help="Service URL (default from config).")
@click.option("--token", envvar="ODS_TOKEN", default=None, help="Bearer token.")
@click.option("--json", "as_json", is_flag=True, help="Print the API envelope verbatim.")
@click.pass_context
def cli(ctx, config_path, url, token, as_json):
    try:
        config = Config.load(config_path)
    except ValidationError as exc:
        click.echo(f"error: {exc.message}", err=True)
        sys.exit(EXIT_VALIDATION)
    ctx.obj = Ctx(config, url or config.url, token if token is not None else config.token, as_json)


@cli.command()
@click.argument("src")
@click.argument("dst")
@click.option("--cc", type=int)
@click.option("--p", "p", type=int)
@click.option("--pp", type=int)
@click.option("--auto", is_flag=True, help="Tune parameters online while the job runs.")
@click.option("--select", "selection", multiple=True, help="Paths under SRC to copy (repeatable).")
@click.option("--rtt", type=float, help="Link rtt hint in ms, for priors and recommendations.")
@click.option("--bw", type=float, help="Link bandwidth hint in Mbps.")
@click.option("--owner")
@click.option("--idempotency-key")
@click.pass_obj
def submit(ctx, src, dst, cc, p, pp, auto, selection, rtt, bw, owner, idempotency_key):
    """Copy SRC (a file or directory URI) under DST."""
    given = {k: v for k, v in (("cc", cc), ("p", p), ("pp", pp)) if v is not None}
    if auto and given:
        click.echo("error: --auto cannot be combined with --cc/--p/--pp", err=True)
        sys.exit(EXIT_VALIDATION)
    body = {"src": src, "dst": dst, "params": "auto" if auto or not given else given}
    if selection:
        body["selection"] = list(selection)
    if owner:
        body["owner"] = owner
    if rtt is not None and bw is not None:
        body["link"] = {"rtt": rtt, "bandwidth": bw}
    headers = {"Idempotency-Key": idempotency_key} if idempotency_key else None

    def human(d):
        click.echo(f"job {d['job_id']} {d['state']}")
        if d.get("predicted_duration") is not None:
            click.echo(f"predicted duration {d['predicted_duration']:.1f} s")

    _call(ctx, lambda: ctx.client.request("POST", "/jobs", body, headers=headers), human)


@cli.command()
@click.argument("job_id", required=False)
@click.pass_obj
def status(ctx, job_id):
    """Show one job, or list all jobs."""
    if job_id is None:
        def human_list(d):
            _table([[j["job_id"], j["owner"], j["state"], j["committed"], j["total"], _params(j["params"])]
                    for j in d["jobs"]], ["JOB", "OWNER", "STATE", "COMMITTED", "TOTAL", "PARAMS"])
        _call(ctx, lambda: ctx.client.request("GET", "/jobs"), human_list)
        return

    def human(d):
        _table([[d["job_id"], d["owner"], d["state"], d["committed"], d["total"], f"{d['mbps']:.1f}",
                 _params(d["params"])]], ["JOB", "OWNER", "STATE", "COMMITTED", "TOTAL", "MBPS", "PARAMS"])
        if d.get("params_timeline"):
            click.echo("params timeline:")
            for t, pv in d["params_timeline"]:
                click.echo(f"  {_ts(t)}  {_params(pv)}")
        if d.get("error"):
            click.echo(f"error: {d['error']}")
        if d.get("outcome"):
            o = d["outcome"]
            click.echo(f"finished: {o['total_bytes']} bytes in {o['duration']:.2f} s "
                       f"({o['avg_throughput']:.1f} Mbps)")

    _call(ctx, lambda: ctx.client.request("GET", f"/jobs/{job_id}"), human)


@cli.command()
@click.argument("job_id")
@click.pass_obj
def eta(ctx, job_id):
    """Expected completion time with a 90% interval."""
    def human(d):
        click.echo(f"expected  {_ts(d['expected_completion'])}  ({d['expected_throughput']:.1f} Mbps, {d['basis']})")
        click.echo(f"90%       {_ts(d['confidence_low'])} .. {_ts(d['confidence_high'])}")
    _call(ctx, lambda: ctx.client.request("GET", f"/jobs/{job_id}/eta"), human)


@cli.command()
@click.argument("job_id")
@click.pass_obj
def tune(ctx, job_id):
    """Run an online tuning round on a running job."""
    def human(d):
        click.echo(f"tuned to {_params(d['params'])} at {d['throughput']:.1f} Mbps "
                   f"after {d['samples']} samples ({d['basis']})")
    _call(ctx, lambda: ctx.client.request("POST", f"/jobs/{job_id}/tune"), human)


@cli.command()
@click.argument("job_id")
@click.option("--cc", type=int, required=True)
@click.option("--p", "p", type=int, required=True)
@click.option("--pp", type=int, required=True)
@click.pass_obj
def params(ctx, job_id, cc, p, pp):
    """Change a running job's parameters."""
    _call(ctx, lambda: ctx.client.request("POST", f"/jobs/{job_id}/params", {"cc": cc, "p": p, "pp": pp}),
          lambda d: click.echo(f"job {d['job_id']} now {_params(d['params'])}"))


@cli.command()
@click.argument("job_id")
@click.pass_obj
def pause(ctx, job_id):
    """Pause a running job after its in-flight chunks land."""
    _call(ctx, lambda: ctx.client.request("POST", f"/jobs/{job_id}/pause"),
          lambda d: click.echo(f"job {d['job_id']} {d['state']}"))


@cli.command()
@click.argument("job_id")
@click.pass_obj
def resume(ctx, job_id):
    """Resume a paused job."""
    _call(ctx, lambda: ctx.client.request("POST", f"/jobs/{job_id}/resume"),
          lambda d: click.echo(f"job {d['job_id']} {d['state']}"))


@cli.command()
@click.option("--rtt", type=float, required=True, help="ms")
@click.option("--bw", type=float, required=True, help="Mbps")
@click.option("--avg-size", type=float, required=True, help="bytes")
@click.option("--regime", type=click.Choice(["peak", "offpeak"]))
@click.pass_obj
def recommend(ctx, rtt, bw, avg_size, regime):
    """Parameters suggested by historical logs for a link."""
    q = {"rtt": rtt, "bandwidth": bw, "avg_file_size": avg_size, "regime": regime}

    def human(d):
        pred = f", predicted {d['predicted']:.1f} Mbps" if d.get("predicted") else ""
        click.echo(f"{_params(d['params'])} ({d['basis']}{pred})")

    _call(ctx, lambda: ctx.client.request("GET", "/recommend", query=q), human)


@cli.command()
@click.argument("scenario", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def simulate(ctx, scenario):
    """Run a scenario JSON through the link simulator (offline)."""
    try:
        out = Scenario.from_file(scenario).run()
    except (OdsError, ValueError, KeyError, TypeError) as exc:
        click.echo(f"error: invalid scenario: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    env = {"v": 1, "request_id": None, "data": out.to_dict()}

    def human(d):
        click.echo(f"duration {out.duration:.1f} s")
        click.echo(f"throughput {out.avg_throughput:.1f} Mbps over {out.total_bytes} bytes")

    _emit(ctx, env, human)


@cli.group()
def logs():
    """Historical transfer logs."""


@logs.command("ingest")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), help="Default: from the extension.")
@click.pass_obj
def logs_ingest(ctx, path, fmt):
    """Send a JSONL or CSV log file to the service; valid rows are kept."""
    fmt = fmt or ("csv" if path.lower().endswith(".csv") else "jsonl")
    text = Path(path).read_text(encoding="utf-8")
    result = {}

    def human(d):
        click.echo(f"ingested {d['accepted']} record(s); store holds {d['total_records']}")
        for e in d["errors"]:
            click.echo(f"row {e['row']}: {e['message']}", err=True)

    def call():
        env = ctx.client.request("POST", "/logs/ingest", text, query={"format": fmt})
        result.update(env["data"])
        return env

    _call(ctx, call, human)
    if result.get("errors"):
        sys.exit(EXIT_VALIDATION)


@cli.group()
def surface():
    """Throughput surfaces."""


@surface.command("build")
@click.option("--regime", type=click.Choice(["peak", "offpeak"]), required=True)
@click.option("--logs", "logs_path", type=click.Path(exists=True, dir_okay=False),
              help="Log file (default: the service data dir's logs.jsonl).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), help="Write surfaces as JSON here.")
@click.pass_obj
def surface_build(ctx, regime, logs_path, out_path):
    """Build per-context surfaces for one load regime (offline)."""
    from ..errors import SparseDataError
    from ..optimizer import build_surface

    path = Path(logs_path) if logs_path else ctx.config.data_path / "logs.jsonl"
    if not path.exists():
        click.echo(f"error: no log file at {path}", err=True)
        sys.exit(EXIT_VALIDATION)
    report = parse_any(path.read_text(encoding="utf-8"), name=path.name)
    for row, msg in report.errors:
        click.echo(f"row {row}: {msg}", err=True)
    groups: dict = {}
    for r in report.records:
        if r.load_regime == regime:
            groups.setdefault(r.context_key(), []).append(r)
    built, skipped = [], []
    for key, recs in sorted(groups.items(), key=lambda kv: str(kv[0])):
        try:
            s = build_surface(recs, regime)
        except SparseDataError as exc:
            skipped.append({"context": list(map(str, key)), "reason": exc.message})
            continue
        best = s.maxima[0] if s.maxima else (None, float("nan"))
        built.append({"context": list(map(str, key)), "records": len(recs),
                      "argmax": best[0].to_dict() if best[0] else None, "peak": best[1],
                      "maxima": len(s.maxima), "surface": s.to_dict()})
    if out_path:
        Path(out_path).write_text(json.dumps([b["surface"] for b in built], indent=1))
    env = {"v": 1, "request_id": None, "data": {
        "regime": regime, "skipped": skipped,
        "surfaces": [{k: v for k, v in b.items() if k != "surface"} for b in built]}}

    def human(d):
        if not built:
            click.echo(f"no context has enough {regime} data for a surface")
        _table([[f"{b['context'][0]}->{b['context'][1]} rtt={b['context'][2]} bw={b['context'][3]}",
                 b["records"], _params(b["argmax"]), f"{b['peak']:.1f}", b["maxima"]] for b in built],
               ["CONTEXT", "RECORDS", "ARGMAX", "MBPS", "MAXIMA"])
        for s in skipped:
            click.echo(f"skipped {s['context'][0]}->{s['context'][1]}: {s['reason']}", err=True)

    _emit(ctx, env, human)
    if not built:
        sys.exit(EXIT_VALIDATION)


@cli.command()
@click.option("--host")
@click.option("--port", type=int)
@click.option("--data-dir")
@click.pass_obj
def serve(ctx, host, port, data_dir):
    """Run the HTTP service in the foreground."""
    import logging

    from .server import OdsHttpServer

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    config = ctx.config.with_(**{k: v for k, v in (("host", host), ("port", port), ("data_dir", data_dir))
                                 if v is not None})
    srv = OdsHttpServer(config)
    click.echo(f"ods listening on {srv.url}, data in {config.data_path}")
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass


def main(argv=None) -> None:
    cli.main(args=argv, prog_name="ods")


if __name__ == "__main__":
    main()
