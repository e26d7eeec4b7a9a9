"""
Command-line surface of the composition engine.

Every command reads a scene file, does one unit of work and writes the updated scene
file back atomically (temp file + rename), so an interrupted run never leaves a
truncated scene behind.

Exit codes: 0 success, 1 user error (bad arguments, schema, unknown ids, graph
problems), 2 service error (guidance oracle, capability, initialization failures).
"""

from dataclasses import replace
from typing import List, Optional
import argparse
import logging
import os
import sys

import numpy as np

from config.settings import (
    DEFAULT_SEED, GUIDANCE_ENDPOINT, GUIDANCE_HOST, GUIDANCE_PORT, RENDER_WORKERS,
    configure_logging, get_synthetic_config,
)
from models.interaction import InteractionStatus
from models.scene import flatten_scene
from services.cameras import turntable
from services.composer import StructuredInitializer
from services.distiller import Distiller
from services.editor import edit_delete, edit_move, edit_replace
from services.exceptions import CompositionError, ValidationError
from services.forge import ObjectGenerator
from services.guidance_client import RemoteGuidanceOracle
from services.oracles import PhotometricTargetOracle, SyntheticCLF
from services.physics import PhysicsSettler
from services.pipeline import ScenePipeline
from services.renderer import SplatRenderer
from services.scene_io import (
    SceneDocument, read_field_ply, read_points, read_scene_file, write_png, write_scene_file,
)

logger = logging.getLogger('cli')

USER_ERROR = 1


class CommandLineError(ValidationError):
    """Bad command-line arguments."""


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1 like every other user error."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USER_ERROR, f"{self.prog}: error: {message}\n")


# Argument helpers

def parse_pair(text: str):
    parts = [p.strip() for p in text.split(',')]
    if len(parts) != 2 or not all(parts):
        raise argparse.ArgumentTypeError(f"expected 'anchor,child', got '{text}'")
    return parts[0], parts[1]


def make_oracle(name: Optional[str], document: SceneDocument = None, reference: str = None, seed: int = 0):
    """
    Build the oracle named on the command line.

    `synthetic` uses the SYNTHETIC_* settings, `photometric` scores against renders of
    the `--reference` PLY, `remote` targets GUIDANCE_ENDPOINT and an http(s) URL targets
    that service. `none` means no oracle.
    """
    if name is None or name == 'none':
        return None
    if name == 'synthetic':
        synthetic = get_synthetic_config()
        return SyntheticCLF(synthetic['target_t'], synthetic['target_s'], noise_sd=synthetic['noise_sd'], seed=seed)
    if name == 'photometric':
        if not reference:
            raise CommandLineError("--oracle photometric needs --reference <field.ply>")
        path = document.resolve(reference) if document else reference
        return PhotometricTargetOracle(read_field_ply(path, 'reference'))
    if name == 'remote':
        return RemoteGuidanceOracle(GUIDANCE_ENDPOINT)
    if name.startswith(('http://', 'https://')):
        return RemoteGuidanceOracle(name)
    raise CommandLineError(f"Unknown oracle '{name}'; use synthetic, photometric, remote, none or a URL")


def require_oracle(oracle, command: str):
    if oracle is None:
        raise CommandLineError(f"{command} needs an oracle; pass --oracle")
    return oracle


def add_oracle_arguments(parser, default: str):
    parser.add_argument('--oracle', default=default,
                        help="synthetic | photometric | remote | none | http(s)://host:port "
                             f"(default: {default})")
    parser.add_argument('--reference', help='reference PLY for the photometric oracle')


# Commands

def cmd_generate(args) -> int:
    document = read_scene_file(args.scene)
    entry = document.entry(args.object)
    if not entry.init_points_path:
        raise CommandLineError(f"Object '{entry.id}' has no init_points_path to start from")
    points = read_points(document.resolve(entry.init_points_path))
    config = document.forge_config()
    config = replace(config, seed=args.seed, **({'iterations': args.iterations} if args.iterations is not None else {}))
    oracle = require_oracle(make_oracle(args.oracle, document, args.reference, args.seed), 'generate')

    field = ObjectGenerator(oracle, config, workers=args.workers).run(
        entry.prompt, points, use_pointe_knn=entry.use_pointe_knn, object_id=entry.id)
    document.fields[entry.id] = field
    # A new field invalidates every placement involving the object
    document.interactions = [
        i.with_updates(status=InteractionStatus.UNSET) if entry.id in i.pair else i for i in document.interactions
    ]
    write_scene_file(document)
    print(f"generated {entry.id}: {len(field)} Gaussians -> {entry.gaussians_path}")
    return 0


def cmd_init(args) -> int:
    document = read_scene_file(args.scene)
    scene = document.scene
    scene.interaction(*args.pair)
    oracle = require_oracle(make_oracle(args.oracle, document, args.reference, args.seed), 'init')
    initializer = StructuredInitializer(oracle, document.init_config(), seed=args.seed)
    params = initializer.run(scene, args.pair)
    write_scene_file(document.with_scene(scene.with_interaction(params)))
    print(f"initialized {args.pair[0]}->{args.pair[1]}: t={np.round(params.translation, 4).tolist()} "
          f"s={params.scale:.4f} calls={initializer.calls}")
    return 0


def cmd_settle(args) -> int:
    document = read_scene_file(args.scene)
    scene = document.scene
    scene.interaction(*args.pair)
    oracle = make_oracle(args.oracle, document, args.reference, args.seed)
    report = PhysicsSettler(document.physics_config()).run(scene, args.pair, clf=oracle, seed=args.seed)
    write_scene_file(document.with_scene(scene.with_interaction(report.params)))
    print(f"settled {args.pair[0]}->{args.pair[1]}: steps={report.steps} impulses={len(report.impulses)} "
          f"L_g={report.gravity_loss:.6f} L_c={report.contact_loss:.6f} oracle_failed={report.oracle_failed}")
    return 0


def cmd_compose(args) -> int:
    document = read_scene_file(args.scene)
    oracle = require_oracle(make_oracle(args.oracle, document, args.reference, args.seed), 'compose')
    pipeline = ScenePipeline(oracle, document.init_config(), document.physics_config(),
                             workers=args.workers, seed=args.seed)
    report = pipeline.run(document.scene)
    write_scene_file(document.with_scene(report.scene))
    for outcome in report.outcomes:
        print(f"composed {outcome.pair[0]}->{outcome.pair[1]}: calls={outcome.oracle_calls} "
              f"steps={outcome.settle.steps}")
    return 0


def cmd_render(args) -> int:
    if args.turntable < 1:
        raise CommandLineError(f"--turntable must be at least 1, got {args.turntable}")
    document = read_scene_file(args.scene)
    field = flatten_scene(document.scene)
    center = field.geometric_center
    radius = args.radius or 3.0 * field.bounding_radius(center)
    os.makedirs(args.out, exist_ok=True)
    renderer = SplatRenderer(workers=args.workers)
    cameras = turntable(args.turntable, radius, elevation=args.elevation, target=center, size=args.size)
    for index, camera in enumerate(cameras):
        path = os.path.join(args.out, f"view_{index:03d}.png")
        write_png(renderer.render(field, camera), path)
    print(f"rendered {len(cameras)} views to {args.out}")
    return 0


def cmd_distill(args) -> int:
    document = read_scene_file(args.scene)
    entry = document.entry(args.object)
    if entry.id not in document.fields:
        raise CommandLineError(f"Object '{entry.id}' has no Gaussians to distill")
    config = replace(document.distill_config(), seed=args.seed,
                     **({'iterations': args.iterations} if args.iterations is not None else {}),
                     **({'view_count': args.views} if args.views is not None else {}))
    report = Distiller(config).run(document.fields[entry.id], args.fraction)
    document.fields[entry.id] = report.field
    entry.gaussians_path = args.output or f"{entry.id}_distilled.ply"
    write_scene_file(document)
    print(f"distilled {entry.id}: {report.source_count} -> {len(report.field)} Gaussians, "
          f"PSNR {report.psnr:.2f} dB")
    return 0


def cmd_edit(args) -> int:
    document = read_scene_file(args.scene)
    scene = document.scene
    if args.action == 'delete':
        scene = edit_delete(scene, args.object)
    elif args.action == 'replace':
        entry = document.entry(args.object)
        field = read_field_ply(document.resolve(args.ply), entry.id, prompt=entry.prompt)
        scene = edit_replace(scene, args.object, field)
        entry.gaussians_path = args.ply
    else:
        scene = edit_move(scene, args.child, args.anchor, prompt=args.prompt)
    write_scene_file(document.with_scene(scene))
    unset = [f"{i.anchor_id}->{i.child_id}" for i in scene.interactions if i.status == InteractionStatus.UNSET]
    print(f"edited {args.scene}: {args.action}; Unset interactions: {', '.join(unset) or 'none'}")
    return 0


def cmd_serve(args) -> int:
    from app import create_app

    oracle = make_oracle(args.oracle, reference=args.reference, seed=args.seed)
    if oracle is None:
        raise CommandLineError("serve needs an in-process oracle")
    create_app(oracle).run(host=args.host, port=args.port)
    return 0


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog='cli.py',
        description='Compose text-described 3D scenes from Gaussian-splat objects',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
    python cli.py generate scene.json --object table --oracle http://127.0.0.1:8080
    python cli.py init scene.json --pair table,plant --seed 3 --oracle synthetic
    python cli.py compose scene.json --oracle synthetic --workers 4
    python cli.py render scene.json --turntable 8 --out renders/
    python cli.py edit scene.json move plant stool
        """
    )
    parser.add_argument('--log-level', default=None, help='DEBUG, INFO, WARNING (default: LOG_LEVEL)')
    commands = parser.add_subparsers(dest='command', required=True, parser_class=ArgumentParser)

    def command(name, handler, help_text):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument('scene', help='scene JSON file')
        sub.add_argument('--seed', type=int, default=DEFAULT_SEED, help='random seed (default: DEFAULT_SEED)')
        sub.set_defaults(handler=handler)
        return sub

    sub = command('generate', cmd_generate, 'optimise one object from its initial point cloud')
    sub.add_argument('--object', required=True)
    sub.add_argument('--iterations', type=int)
    sub.add_argument('--workers', type=int, default=RENDER_WORKERS)
    add_oracle_arguments(sub, 'remote')

    sub = command('init', cmd_init, 'structured Monte-Carlo initialisation of one interaction')
    sub.add_argument('--pair', type=parse_pair, required=True, help='anchor,child')
    add_oracle_arguments(sub, 'remote')

    sub = command('settle', cmd_settle, 'physics settle of one initialised interaction')
    sub.add_argument('--pair', type=parse_pair, required=True, help='anchor,child')
    add_oracle_arguments(sub, 'none')

    sub = command('compose', cmd_compose, 'init + settle every interaction in ancestral order')
    sub.add_argument('--workers', type=int, default=1)
    add_oracle_arguments(sub, 'remote')

    sub = command('render', cmd_render, 'turntable renders of the flattened scene')
    sub.add_argument('--turntable', type=int, default=8)
    sub.add_argument('--out', required=True)
    sub.add_argument('--elevation', type=float, default=30.0)
    sub.add_argument('--radius', type=float, default=None)
    sub.add_argument('--size', type=int, default=256)
    sub.add_argument('--workers', type=int, default=RENDER_WORKERS)

    sub = command('distill', cmd_distill, 'retrain a smaller field for one object')
    sub.add_argument('--object', required=True)
    sub.add_argument('--fraction', type=float, required=True)
    sub.add_argument('--views', type=int)
    sub.add_argument('--iterations', type=int)
    sub.add_argument('--output', help='PLY path for the distilled field (default: <id>_distilled.ply)')

    sub = command('edit', cmd_edit, 'delete, replace or move an object')
    actions = sub.add_subparsers(dest='action', required=True, parser_class=ArgumentParser)
    delete = actions.add_parser('delete')
    delete.add_argument('object')
    swap = actions.add_parser('replace')
    swap.add_argument('object')
    swap.add_argument('ply', help='PLY file with the new field')
    move = actions.add_parser('move')
    move.add_argument('child')
    move.add_argument('anchor')
    move.add_argument('--prompt', default=None)

    serve = commands.add_parser('serve', help='serve an in-process oracle over the guidance protocol')
    serve.add_argument('--oracle', default='synthetic', choices=['synthetic', 'photometric'])
    serve.add_argument('--reference', help='reference PLY for the photometric oracle')
    serve.add_argument('--host', default=GUIDANCE_HOST)
    serve.add_argument('--port', type=int, default=GUIDANCE_PORT)
    serve.add_argument('--seed', type=int, default=DEFAULT_SEED)
    serve.set_defaults(handler=cmd_serve)
    return parser


def main(argv: List[str] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level.upper() if args.log_level else None)
    try:
        return args.handler(args)
    except CompositionError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return USER_ERROR


if __name__ == '__main__':
    sys.exit(main())
