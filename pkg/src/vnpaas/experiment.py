"""Full vs. split HSS front-end experiments, end to end through the orchestrator.

Each run deploys the HSS service through the orchestrator and the zone
agents. Front ends come up as router backends when their agent brings them
to ``running``, and traffic starts once the NS is up. Samples reach the
zone agents' metric stores and are read back from there.
"""

import csv
import io
import itertools
import json
import logging
import os
from dataclasses import dataclass, field
from importlib import resources

from . import analysis
from . import template as tpl
from .agent import OrchestrationAgent
from .diameter import APPLICATIONS, BackendRegistration, DiameterRouter, RoutingError
from .discovery import DiscoveryEngine
from .hss import FrontEndVnf, UdrModel, calibrate_arrival_rate, service_table
from .orchestrator import Orchestrator, ZoneConfig
from .sim import Engine, RngStream, as_ms, ms
from .workload import COMMAND_MIX, ConservationLedger, TrafficGenerator, TrafficProfile

log = logging.getLogger(__name__)

SETUPS = ("full", "split")
R_LEVELS = (0.25, 0.50, 0.70, 0.90)
FE_APPLICATIONS = {"S6a": ("S6a",), "Cx": ("Cx",), "HSS-FE": ("S6a", "Cx")}
UDR_TYPE = "UDR"

SAMPLE_HEADER = ["run_id", "setup", "R", "interface", "command", "message_id", "response_ms"]
CDF_HEADER = ["setup", "R", "interface", "value_ms", "fraction"]
CANDLE_HEADER = ["setup", "R", "command", "min", "q1", "mean", "q3", "max", "n"]


class ExperimentError(Exception):
    exit_code = 1


class UsageError(ExperimentError):
    exit_code = 2


class CalibrationFailed(ExperimentError):
    exit_code = 3


class DeploymentFailed(ExperimentError):
    exit_code = 4


class ConservationFailed(ExperimentError):
    exit_code = 5


class CompareError(ExperimentError):
    exit_code = 6


def data_text(name):
    return resources.files("vnpaas").joinpath("data", name).read_text()


def fmt_r(r):
    return f"{r:g}"


@dataclass
class ExperimentConfig:
    setups: tuple = SETUPS
    r_levels: tuple = R_LEVELS
    repetitions: int = 3
    duration_s: float = 60.0
    seed: int = 0
    service_times: dict = field(default_factory=service_table)
    mixes: dict = field(default_factory=lambda: {k: dict(v) for k, v in COMMAND_MIX.items()})
    arrivals: str = "poisson"
    warmup_fraction: float = 0.1
    grubbs_alpha: float = 0.05
    grubbs_grouping: str = "command"
    sync_db: bool = True
    jitter: bool = False
    proxy_delay_ms: float = 0.0
    udr_servers: int = 16
    calibration_duration_s: float = None
    rates: dict = None
    zones: tuple = (
        ZoneConfig("zone-1", cpu=64, memory_mib=262144, location_tag="site-a"),
        ZoneConfig("zone-2", cpu=64, memory_mib=262144, location_tag="site-b"),
    )

    def __post_init__(self):
        self.setups = tuple(self.setups)
        self.r_levels = tuple(float(r) for r in self.r_levels)
        for s in self.setups:
            if s not in SETUPS:
                raise UsageError(f"unknown setup {s!r}; expected one of {SETUPS}")
        for r in self.r_levels:
            if not 0 < r < 1:
                raise UsageError(f"R must lie in (0, 1), got {r}")
        if self.repetitions < 1:
            raise UsageError("repetitions must be at least 1")
        if self.duration_s <= 0:
            raise UsageError("duration must be positive")
        if self.grubbs_grouping not in ("command", "interface", "none"):
            raise UsageError(f"unknown Grubbs grouping {self.grubbs_grouping!r}")

    @classmethod
    def from_mapping(cls, doc, **overrides):
        doc = {k: v for k, v in (doc or {}).items() if k != "__line__"}
        exp = {k: v for k, v in (doc.get("experiment") or {}).items() if k != "__line__"}
        kw = {}
        keys = {"setups": "setups", "R_levels": "r_levels", "repetitions": "repetitions",
                "duration_s": "duration_s", "seed": "seed", "arrivals": "arrivals",
                "warmup_fraction": "warmup_fraction", "grubbs_alpha": "grubbs_alpha",
                "grubbs_grouping": "grubbs_grouping", "sync_db": "sync_db", "jitter": "jitter",
                "proxy_delay_ms": "proxy_delay_ms", "udr_servers": "udr_servers",
                "calibration_duration_s": "calibration_duration_s"}
        for key, attr in keys.items():
            if key in exp:
                kw[attr] = exp[key]
        unknown = set(exp) - set(keys)
        if unknown:
            raise UsageError(f"unknown experiment keys {sorted(unknown)}")
        if doc.get("service_times"):
            table = {c: {k: v for k, v in cost.items() if k != "__line__"}
                     for c, cost in doc["service_times"].items() if c != "__line__"}
            kw["service_times"] = service_table(table)
        if doc.get("profiles"):
            mixes = {k: dict(COMMAND_MIX[k]) for k in COMMAND_MIX}
            for iface, mix in doc["profiles"].items():
                if iface == "__line__":
                    continue
                if iface not in COMMAND_MIX:
                    raise UsageError(f"unknown interface {iface!r} in profiles")
                mixes[iface] = {c: float(p) for c, p in mix.items() if c != "__line__"}
            kw["mixes"] = mixes
        if doc.get("rates"):
            kw["rates"] = {float(r): {i: float(v) for i, v in per.items() if i != "__line__"}
                           for r, per in doc["rates"].items() if r != "__line__"}
        if doc.get("zones"):
            kw["zones"] = tuple(ZoneConfig(str(z["zone_id"]), cpu=int(z.get("cpu", 64)),
                                           memory_mib=int(z.get("memory_mib", 262144)),
                                           location_tag=str(z.get("location_tag", "")))
                                for z in doc["zones"])
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)

    @classmethod
    def load(cls, path, **overrides):
        with open(path) as fh:
            return cls.from_mapping(tpl.load_document(fh.read()), **overrides)

    def to_mapping(self):
        return {
            "experiment": {
                "setups": list(self.setups), "R_levels": list(self.r_levels),
                "repetitions": self.repetitions, "duration_s": self.duration_s,
                "seed": self.seed, "arrivals": self.arrivals,
                "warmup_fraction": self.warmup_fraction, "grubbs_alpha": self.grubbs_alpha,
                "grubbs_grouping": self.grubbs_grouping, "sync_db": self.sync_db,
                "jitter": self.jitter, "proxy_delay_ms": self.proxy_delay_ms,
                "udr_servers": self.udr_servers,
                "calibration_duration_s": self.calibration_duration_s,
            },
            "service_times": {c: {"cpu_ms": v.cpu_ms, "db_ms": v.db_ms,
                                  "db_contention_factor": v.db_contention_factor}
                              for c, v in self.service_times.items()},
            "profiles": self.mixes,
            "zones": [{"zone_id": z.zone_id, "cpu": z.cpu, "memory_mib": z.memory_mib,
                       "location_tag": z.location_tag} for z in self.zones],
        }


@dataclass(frozen=True)
class ScenarioSpec:
    setup: str
    template: object
    placement: dict
    applications: dict


def hss_template():
    return tpl.parse(data_text("hss.yaml"))


def full_fe_template():
    return tpl.parse(data_text("hss-full.yaml"))


def paper_placement():
    return {"S6a": "zone-1", "UDR": "zone-1", "Cx": "zone-2"}


def build_scenario(setup):
    """Template, placement and router wiring for ``full`` or ``split``."""
    if setup == "split":
        t, placement = hss_template(), paper_placement()
    elif setup == "full":
        t = full_fe_template()
        placement = {n.id: "zone-1" for n in t.vnf_nodes()}
    else:
        raise UsageError(f"unknown setup {setup!r}; expected 'full' or 'split'")
    apps = {n.vnf_type: FE_APPLICATIONS[n.vnf_type] for n in t.vnf_nodes()
            if n.vnf_type in FE_APPLICATIONS}
    return ScenarioSpec(setup, t, placement, apps)


def run_id_for(setup, r, rep):
    return f"{setup}-R{round(r * 100):02d}-rep{rep}"


@dataclass
class RunResult:
    run_id: str
    setup: str
    R: float
    rep: int
    samples: list
    ledger: ConservationLedger
    busy: dict
    cross_application_waits: dict
    deployed_at: int
    rejected_metrics: int = 0
    trace: list = None

    def rows(self):
        for s in self.samples:
            yield (self.run_id, self.setup, fmt_r(self.R), s.interface, s.command,
                   s.message_id, f"{s.response_time:.3f}")


class Simulation:
    """One (setup, R, repetition) cell: deploy, drive traffic, collect."""

    def __init__(self, config, setup, r, rep, rates, trace=False):
        self.config = config
        self.spec = build_scenario(setup)
        self.r, self.rep, self.rates = r, rep, rates
        self.run_id = run_id_for(setup, r, rep)
        self.engine = Engine(trace=trace)
        self.discovery = DiscoveryEngine(self.engine)
        self.router = DiameterRouter(self.engine, ms(config.proxy_delay_ms))
        self.ledger = ConservationLedger()
        self.table = config.service_times
        self.udrs = {}
        self.fes = {}
        self.in_transit = {}
        self.agents = {}
        zones = []
        for z in config.zones:
            agent = OrchestrationAgent(z.zone_id, self.engine, self.discovery, z.cpu, z.memory_mib,
                                       on_running=self._vnf_running, on_stopped=self._vnf_stopped)
            self.agents[z.zone_id] = agent
            zones.append(ZoneConfig(z.zone_id, agent, z.cpu, z.memory_mib, z.location_tag))
        self.orchestrator = Orchestrator(self.engine, self.discovery, zones)
        self.ns = None
        self.t0 = None

    # wiring ------------------------------------------------------------------

    def _vnf_running(self, agent, inst):
        if inst.vnf_type == UDR_TYPE:
            self.udrs[inst.endpoints[0].address] = UdrModel(self.engine, self.table,
                                                            self.config.udr_servers)
            return
        apps = self.spec.applications.get(inst.vnf_type)
        if apps is None:
            return
        udr = next((self.udrs[cp.address] for cps in inst.peers.values() for cp in cps
                    if cp.address in self.udrs), None)
        if udr is None:
            raise DeploymentFailed(f"{inst.instance_id}: no UDR endpoint among its peers")
        jitter = (RngStream(self.config.seed, f"jitter/{self.run_id}/{inst.instance_id}")
                  if self.config.jitter else None)
        fe = FrontEndVnf(self.engine, inst.instance_id, apps, udr, self.table,
                         on_complete=self._completed, sync_db=self.config.sync_db, jitter=jitter)
        self.fes[inst.instance_id] = (fe, agent)

        def deliver(msg, fe=fe):
            self.in_transit.pop(msg.message_id, None)
            if not fe.handle(msg):
                self.ledger.dropped(msg)

        self.router.register_backend(
            BackendRegistration(inst.instance_id, frozenset(apps), inst.endpoints[0]), deliver)

    def _vnf_stopped(self, agent, inst):
        entry = self.fes.pop(inst.instance_id, None)
        if entry is None:
            return
        self.router.deregister_backend(inst.instance_id)
        for msg in entry[0].stop():
            self.ledger.dropped(msg)

    def _completed(self, fe, msg):
        self.ledger.completed(msg)
        sample = analysis.ResponseSample(
            msg.message_id, msg.application, msg.command, as_ms(msg.completed_at - msg.created_at),
            self.run_id, self.spec.setup, self.r, fe.instance_id, msg.created_at, msg.completed_at)
        self.fes[fe.instance_id][1].ingest_metric(sample)

    def _dispatch(self, msg):
        # held until delivery so a proxy delay never hides a message from the ledger
        self.in_transit[msg.message_id] = msg
        try:
            self.router.route(msg)
        except RoutingError:
            self.in_transit.pop(msg.message_id)
            return False
        return True

    # phases ------------------------------------------------------------------

    def deploy(self):
        plan = self.orchestrator.decompose(self.spec.template, self.spec.placement,
                                           f"{self.spec.template.name}-{self.run_id}")
        self.orchestrator.configure_discovery(plan)
        self.ns = self.orchestrator.deploy(plan)
        self.engine.run()
        if self.ns.status != "running":
            raise DeploymentFailed(f"{self.run_id}: deployment {self.ns.status}: {self.ns.errors}")
        self.t0 = self.engine.now
        return self.ns

    def start_traffic(self):
        ids = itertools.count(1)
        self.generators = []
        for iface in APPLICATIONS:
            rate = self.rates[iface]
            profile = TrafficProfile(iface, self.config.mixes[iface], self.config.duration_s,
                                     rate=rate, seed=self.config.seed,
                                     arrivals=self.config.arrivals)
            gen = TrafficGenerator(self.engine, profile, self._dispatch,
                                   stream=f"arrivals/{iface}/R{fmt_r(self.r)}/rep{self.rep}",
                                   ledger=self.ledger, ids=ids)
            gen.start()
            self.generators.append(gen)

    def in_flight(self):
        out = list(self.in_transit.values())
        for fe, _ in self.fes.values():
            out.extend(fe.queue)
            out.extend(entry[0] for entry in fe.in_service.values())
        return out

    def teardown(self):
        self.orchestrator.teardown(self.ns.ns_instance_id)

    def run(self, teardown_at_s=None):
        if self.t0 is None:
            self.deploy()
        self.start_traffic()
        dur = ms(self.config.duration_s * 1000.0)
        t_warm = self.t0 + ms(self.config.duration_s * 1000.0 * self.config.warmup_fraction)
        self.engine.run_until(t_warm)
        busy0 = {k: fe.busy_time() for k, (fe, _) in self.fes.items()}
        if teardown_at_s is not None:
            self.engine.run_until(self.t0 + ms(teardown_at_s * 1000.0))
            self.teardown()
        self.engine.run_until(self.t0 + dur)
        window = self.t0 + dur - t_warm
        busy = {k: (fe.busy_time() - busy0[k]) / (window * fe.cpu_capacity)
                for k, (fe, _) in self.fes.items()}
        self.ledger.close(self.in_flight())
        samples = sorted((s for a in self.agents.values() for s in a.metrics
                          if s.created_at >= t_warm),
                         key=lambda s: (s.completed_at, s.message_id))
        return RunResult(
            self.run_id, self.spec.setup, self.r, self.rep, samples, self.ledger, busy,
            {k: fe.cross_application_waits for k, (fe, _) in self.fes.items()}, self.t0,
            sum(a.rejected_metrics for a in self.agents.values()), self.engine.trace)


def deployment_trace(setup="split", config=None):
    """Event trace of deploying the scenario, with no traffic."""
    config = config or ExperimentConfig()
    sim = Simulation(config, setup, 0.5, 1, {"S6a": 0.0, "Cx": 0.0}, trace=True)
    sim.deploy()
    return sim.engine.trace, sim


def calibrate_rates(config, r):
    """Per-interface arrival rates (msg/s) for utilization ``r``."""
    if config.rates and r in config.rates:
        return dict(config.rates[r])
    dur = config.calibration_duration_s or config.duration_s
    out = {}
    for iface in APPLICATIONS:
        try:
            out[iface] = calibrate_arrival_rate(
                r, config.service_times, config.mixes[iface], seed=config.seed, duration_s=dur,
                warmup_fraction=config.warmup_fraction, interface=iface,
                stream=f"calibration/R{fmt_r(r)}", sync_db=config.sync_db,
                udr_servers=config.udr_servers)
        except Exception as exc:
            raise CalibrationFailed(f"calibration failed for {iface} at R={fmt_r(r)}: {exc}") from exc
    return out


# grouping and statistics -----------------------------------------------------

def _group_key(grouping, row):
    if grouping == "command":
        return (row[0], row[3], row[4])
    if grouping == "interface":
        return (row[0], row[3])
    return (row[0],)


def filtered_groups(rows, alpha=0.05, grouping="command"):
    """Grubbs-filter sample rows and pool them per (setup, R).

    Returns ({(setup, R, interface): values}, {(setup, R, command): values},
    {run_id: removed count}).
    """
    groups = {}
    for row in rows:
        groups.setdefault(_group_key(grouping, row), []).append(row)
    by_iface, by_cmd, removed = {}, {}, {}
    for key in sorted(groups):
        grp = groups[key]
        values = [float(r[6]) for r in grp]
        if grouping == "none":
            keep = range(len(grp))
            result = analysis.GrubbsResult(values)
        else:
            result = analysis.grubbs_filter(values, alpha)
            dropped = set(result.removed)
            keep = [i for i in range(len(grp)) if i not in dropped]
        removed[key[0]] = removed.get(key[0], 0) + len(result.removed)
        for i in keep:
            run_id, setup, r, iface, cmd = grp[i][:5]
            by_iface.setdefault((setup, float(r), iface), []).append(values[i])
            by_cmd.setdefault((setup, float(r), cmd), []).append(values[i])
    return by_iface, by_cmd, removed


def _p95(values):
    import numpy as np
    return float(np.quantile(values, 0.95))


def interface_stats(values):
    return {"n": len(values), "median": analysis.median(values),
            "mean": float(sum(values) / len(values)), "p95": _p95(values)}


@dataclass
class ResultBundle:
    config: ExperimentConfig
    rates: dict
    runs: list
    by_interface: dict
    by_command: dict
    grubbs_removed: dict

    def summary(self):
        cells = {}
        for (setup, r, iface), vals in sorted(self.by_interface.items()):
            cells.setdefault(f"{setup}/R{fmt_r(r)}", {})[iface] = interface_stats(vals)
        return {
            "config": self.config.to_mapping(),
            "duration_s": self.config.duration_s,
            "rates": {fmt_r(r): v for r, v in sorted(self.rates.items())},
            "runs": [
                {"run_id": run.run_id, "setup": run.setup, "R": run.R, "rep": run.rep,
                 "busy_fraction": run.busy, "ledger": run.ledger.totals(),
                 "audit": "ok" if not run.ledger.imbalances() else "violation",
                 "grubbs_removed": self.grubbs_removed.get(run.run_id, 0),
                 "cross_application_waits": run.cross_application_waits,
                 "rejected_metrics": run.rejected_metrics,
                 "deployed_at_ms": as_ms(run.deployed_at), "samples": len(run.samples)}
                for run in self.runs
            ],
            "cells": cells,
        }

    def sample_rows(self):
        for run in self.runs:
            yield from run.rows()

    def cdf_rows(self):
        for (setup, r, iface), vals in sorted(self.by_interface.items()):
            for v, f in analysis.ecdf(vals):
                yield setup, fmt_r(r), iface, f"{v:.3f}", f"{f:.6f}"

    def candle_rows(self):
        for (setup, r, cmd), vals in sorted(self.by_command.items()):
            c = analysis.candlestick(vals)
            yield (setup, fmt_r(r), cmd, f"{c.min:.3f}", f"{c.q1:.3f}", f"{c.mean:.3f}",
                   f"{c.q3:.3f}", f"{c.max:.3f}", c.n)

    def write(self, out_dir):
        os.makedirs(os.path.join(out_dir, "samples"), exist_ok=True)
        for run in self.runs:
            _write_csv(os.path.join(out_dir, "samples", f"{run.run_id}.csv"), SAMPLE_HEADER,
                       run.rows())
        _write_csv(os.path.join(out_dir, "cdf.csv"), CDF_HEADER, self.cdf_rows())
        _write_csv(os.path.join(out_dir, "candle.csv"), CANDLE_HEADER, self.candle_rows())
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def samples_csv(run):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SAMPLE_HEADER)
    w.writerows(run.rows())
    return buf.getvalue()


def run(config, out_dir=None):
    """Run every (setup, R, repetition) cell of ``config``."""
    rates = {r: calibrate_rates(config, r) for r in config.r_levels}
    runs = []
    for setup in config.setups:
        for r in config.r_levels:
            for rep in range(1, config.repetitions + 1):
                result = Simulation(config, setup, r, rep, rates[r]).run()
                bad = result.ledger.imbalances()
                if bad:
                    raise ConservationFailed(f"{result.run_id}: conservation violated: {bad}")
                log.info("%s: %d samples, busy %s", result.run_id, len(result.samples),
                         {k: round(v, 3) for k, v in result.busy.items()})
                runs.append(result)
    rows = [row for run_ in runs for row in run_.rows()]
    by_iface, by_cmd, removed = filtered_groups(rows, config.grubbs_alpha, config.grubbs_grouping)
    bundle = ResultBundle(config, rates, runs, by_iface, by_cmd, removed)
    if out_dir is not None:
        bundle.write(out_dir)
    return bundle


# comparison -------------------------------------------------------------------

@dataclass
class LoadedResults:
    duration_s: float
    r_levels: tuple
    by_interface: dict
    by_command: dict


def load_results(out_dir, alpha=None, grouping=None):
    with open(os.path.join(out_dir, "summary.json")) as fh:
        summary = json.load(fh)
    exp = summary["config"]["experiment"]
    rows = []
    sample_dir = os.path.join(out_dir, "samples")
    for name in sorted(os.listdir(sample_dir)):
        with open(os.path.join(sample_dir, name), newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != SAMPLE_HEADER:
                raise CompareError(f"{name}: unexpected header {header}")
            rows.extend(reader)
    by_iface, by_cmd, _ = filtered_groups(rows, alpha or exp["grubbs_alpha"],
                                          grouping or exp["grubbs_grouping"])
    levels = tuple(sorted({float(r["R"]) for r in summary["runs"]}))
    return LoadedResults(float(summary["duration_s"]), levels, by_iface, by_cmd)


def from_bundle(bundle):
    return LoadedResults(bundle.config.duration_s, tuple(sorted(bundle.config.r_levels)),
                         bundle.by_interface, bundle.by_command)


def _verdict(rep):
    return {"a_dominates": "split_dominates", "b_dominates": "full_dominates"}.get(
        rep.verdict, "crossing")


def compare(full, split, similar_within=0.20):
    """Isolation report comparing full and split results at each common R."""
    if isinstance(full, ResultBundle):
        full = from_bundle(full)
    if isinstance(split, ResultBundle):
        split = from_bundle(split)
    if full.duration_s != split.duration_s:
        raise CompareError(f"run durations differ: full {full.duration_s}s, "
                           f"split {split.duration_s}s")
    full_r = sorted({r for (s, r, _) in full.by_interface if s == "full"})
    split_r = sorted({r for (s, r, _) in split.by_interface if s == "split"})
    if not full_r or not split_r:
        raise CompareError("need full results on one side and split results on the other")
    if full_r != split_r:
        raise CompareError(f"R levels differ: full {full_r}, split {split_r}")
    report = {"duration_s": full.duration_s, "levels": []}
    for r in full_r:
        level = {"R": r, "interfaces": {}, "commands": {}, "findings": []}
        for iface in APPLICATIONS:
            f_vals = full.by_interface[("full", r, iface)]
            s_vals = split.by_interface[("split", r, iface)]
            dom = analysis.dominance_report(s_vals, f_vals)
            ratio = analysis.median(s_vals) / analysis.median(f_vals)
            similar = abs(ratio - 1.0) <= similar_within
            level["interfaces"][iface] = {
                "full": interface_stats(f_vals), "split": interface_stats(s_vals),
                "dominance": _verdict(dom), "split_over_full_median": ratio,
                "similar": similar,
            }
            if dom.verdict == "a_dominates":
                level["findings"].append(f"split-{iface} dominates full-{iface}")
            elif dom.verdict == "b_dominates":
                level["findings"].append(f"full-{iface} dominates split-{iface}")
            if similar:
                level["findings"].append(f"{iface} medians similar (ratio {ratio:.3f})")
        for (setup, rr, cmd) in sorted(full.by_command):
            if setup != "full" or rr != r or ("split", r, cmd) not in split.by_command:
                continue
            fc = analysis.candlestick(full.by_command[("full", r, cmd)])
            sc = analysis.candlestick(split.by_command[("split", r, cmd)])
            level["commands"][cmd] = {"full": fc.__dict__, "split": sc.__dict__}
        report["levels"].append(level)
    return report
