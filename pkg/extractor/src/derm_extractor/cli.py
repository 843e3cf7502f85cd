"""derm-extract: preprocess a dermoscopy dataset and export a feature bundle.

Exit codes: 0 success, 2 configuration error, 3 data error,
5 backbone/environment error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .backbones import make_text_encoder, make_vision_backbone
from .errors import BackboneUnavailableError, ExtractorConfigError, ExtractorDataError
from .export import extract_and_export
from .manifest import DEFAULT_MIN_CLASS_COUNT, load_manifest
from .preprocess import BORDER_THRESHOLD, TARGET_SIZE

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_ENVIRONMENT = 5


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="derm-extract",
        description="Export multi-level image features and meta-text token "
        "embeddings as a retrieval feature bundle.",
    )
    parser.add_argument("--manifest", required=True, help="case table (csv/tsv)")
    parser.add_argument("--images-root", default="", help="prefix for manifest image paths")
    parser.add_argument("--out", required=True, help="output bundle path")
    parser.add_argument("--backbone", default="hash", choices=("hash", "swin"))
    parser.add_argument("--text-encoder", default="hash", choices=("hash", "bert"))
    parser.add_argument("--text-model", default="bert-base-uncased",
                        help="model id/path for --text-encoder bert")
    parser.add_argument("--no-pretrained", action="store_true",
                        help="use randomly initialized backbone weights")
    parser.add_argument("--text-dim", type=int, default=16,
                        help="embedding width for --text-encoder hash")
    parser.add_argument("--size", type=int, default=TARGET_SIZE)
    parser.add_argument("--threshold", type=float, default=BORDER_THRESHOLD,
                        help="border intensity threshold on a 0..1 scale")
    parser.add_argument("--min-class-count", type=int, default=DEFAULT_MIN_CLASS_COUNT)
    parser.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        manifest = load_manifest(args.manifest, min_class_count=args.min_class_count)
        vision = make_vision_backbone(
            args.backbone, seed=args.seed, image_size=args.size,
            pretrained=not args.no_pretrained,
        )
        text_encoder = make_text_encoder(
            args.text_encoder, text_dim=args.text_dim, model_id=args.text_model
        )
        summary = extract_and_export(
            manifest,
            args.out,
            vision,
            text_encoder,
            images_root=args.images_root,
            size=args.size,
            threshold=args.threshold,
            backbone_note=args.backbone,
        )
    except ExtractorConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ExtractorDataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackboneUnavailableError as exc:
        print(f"environment error: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT
    print(
        f"wrote {args.out}: {summary['entries']} entries, {summary['queries']} queries, "
        f"classes {summary['classes']}"
    )
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
