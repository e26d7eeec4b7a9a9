"""
Ancestral composition: initialise and settle every interaction of a scene.

Interactions are grouped into layers by the depth of their anchor. An interaction only
needs its anchor's chain resolved, so all interactions of one layer are independent and
may run on a thread pool; layers run in order. Each interaction draws its seed from its
position in the topological order, which keeps results independent of the worker count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple
import logging

from config.composer import InitConfig
from config.physics import PhysicsConfig
from models.interaction import InteractionParams
from models.scene import Scene
from services.composer import StructuredInitializer
from services.oracles import CLFOracle
from services.physics import PhysicsSettler, SettleReport

logger = logging.getLogger(__name__)


@dataclass
class InteractionOutcome:
    pair: Tuple[str, str]
    order: int
    seed: int
    initialized: InteractionParams
    settle: SettleReport
    oracle_calls: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def params(self) -> InteractionParams:
        return self.settle.params


@dataclass
class CompositionReport:
    scene: Scene
    outcomes: List[InteractionOutcome]

    @property
    def order(self) -> List[Tuple[str, str]]:
        return [o.pair for o in self.outcomes]


class ScenePipeline:
    def __init__(self, oracle: CLFOracle, init_config: InitConfig = None, physics_config: PhysicsConfig = None,
                 renderer=None, workers: int = 1, seed: int = 0):
        self.oracle = oracle
        self.init_config = init_config or InitConfig()
        self.physics_config = physics_config or PhysicsConfig()
        self.renderer = renderer
        self.workers = max(1, int(workers))
        self.seed = int(seed)
        self.logger = logging.getLogger(__name__)

    @staticmethod
    def layers(scene: Scene) -> List[List[InteractionParams]]:
        """Topologically ordered interactions grouped by the chain length of their anchor."""
        grouped = {}
        for inter in scene.topological_order():
            depth = len(scene.anchor_chain(inter.anchor_id))
            grouped.setdefault(depth, []).append(inter)
        return [grouped[d] for d in sorted(grouped)]

    def compose_interaction(self, scene: Scene, pair: Tuple[str, str], order: int, seed: int) -> InteractionOutcome:
        initializer = StructuredInitializer(self.oracle, self.init_config, renderer=self.renderer, seed=seed)
        initialized = initializer.run(scene, pair)
        staged = scene.with_interaction(initialized)
        report = PhysicsSettler(self.physics_config, self.renderer).run(staged, pair, clf=self.oracle, seed=seed)
        return InteractionOutcome(pair=pair, order=order, seed=seed, initialized=initialized, settle=report,
                                  oracle_calls=initializer.calls, diagnostics=initializer.diagnostics())

    def run(self, scene: Scene, pairs: Optional[List[Tuple[str, str]]] = None) -> CompositionReport:
        """Compose all interactions, or only `pairs`, in ancestral order."""
        ordered = [inter.pair for inter in scene.topological_order()]
        wanted = set(ordered if pairs is None else [tuple(p) for p in pairs])
        for pair in wanted:
            scene.interaction(*pair)
        index = {pair: i for i, pair in enumerate(ordered)}
        self.logger.info(f"COMPOSE_START: {len(wanted)} of {len(ordered)} interactions, workers={self.workers}")

        outcomes = []
        for depth, layer in enumerate(self.layers(scene)):
            jobs = [inter.pair for inter in layer if inter.pair in wanted]
            if not jobs:
                continue
            current = scene

            def run_one(pair):
                return self.compose_interaction(current, pair, index[pair], self.seed + index[pair])

            if self.workers > 1 and len(jobs) > 1:
                with ThreadPoolExecutor(max_workers=min(self.workers, len(jobs))) as pool:
                    results = list(pool.map(run_one, jobs))
            else:
                results = [run_one(pair) for pair in jobs]

            for outcome in results:
                scene = scene.with_interaction(outcome.params)
                outcomes.append(outcome)
                self.logger.info(f"COMPOSE_PROGRESS: {outcome.pair[0]}->{outcome.pair[1]} layer={depth} "
                                 f"calls={outcome.oracle_calls} steps={outcome.settle.steps} "
                                 f"contact={outcome.settle.contact_established}")

        outcomes.sort(key=lambda o: o.order)
        self.logger.info(f"COMPOSE_DONE: {len(outcomes)} interactions settled")
        return CompositionReport(scene=scene, outcomes=outcomes)


def compose_scene(scene: Scene, oracle: CLFOracle, init_config: InitConfig = None,
                  physics_config: PhysicsConfig = None, seed: int = 0, workers: int = 1,
                  renderer=None) -> CompositionReport:
    return ScenePipeline(oracle, init_config, physics_config, renderer=renderer, workers=workers,
                         seed=seed).run(scene)
