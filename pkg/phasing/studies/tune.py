import logging

from .. import Bench
from ..controllers import RelayResult, relay_tune
from ..engine import VirtualEngine, engine_cycle_period
from ..models import CasePreset, ControlCommand

logger = logging.getLogger(__name__)

SETTLE_TIME = 8.0


def tune_pid(
    bench: Bench,
    case: str = "case2",
    *,
    seed: int = 0,
    cylinder: int = 1,
    relay_amplitude: float = 1.0,
    cycles: int = 40,
) -> RelayResult:
    """Relay experiment on one cylinder at the preset's first operating point, after the airpath settles."""
    source = bench.preset(case)
    point = source.segments[0]
    # one operating point for as long as the experiment lasts
    preset = CasePreset(f"{source.name}-relay", (point, point), segment_duration=1e6, transition_time=0.0)
    engine = VirtualEngine(bench.plant_config(), seed)
    engine.reset(point)
    engine.advance(SETTLE_TIME, preset)
    period = engine_cycle_period(point.speed)
    counter = {"cycle": 0}

    def respond(soi: float) -> float:
        counter["cycle"] += 1
        engine.advance(engine.time + period, preset)
        command = ControlCommand(soi, cylinder, counter["cycle"])
        return engine.cylinder_cycle(cylinder, command, point, cycle_index=counter["cycle"]).ca50_measured

    result = relay_tune(
        respond,
        point.ca50_ref,
        base_soi=bench.harness.controllers.base_soi,
        relay_amplitude=relay_amplitude,
        cycles=cycles,
        band=bench.harness.controllers.soi_band,
    )
    logger.info("relay tuning on %s cyl %d: kp=%.3f ki=%.3f", source.name, cylinder, result.kp, result.ki)
    return result


__all__ = ["tune_pid"]
