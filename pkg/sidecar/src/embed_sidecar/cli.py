"""Command line for the sidecar: encode, serve, score."""

from __future__ import annotations

import click

from embed_sidecar.encoder import (
    DEFAULT_MODEL,
    EncoderError,
    encode_texts,
    get_model,
    read_texts,
    write_embeddings,
)
from embed_sidecar.scorer import (
    SUPPORTED_METRICS,
    ScorerError,
    read_pairs,
    score_pairs,
    write_scores,
)


@click.group()
def main() -> None:
    """Embedding and summary-scoring sidecar."""


@main.command("encode")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--output", "output_path", required=True, type=click.Path())
@click.option("--model", "model_id", default=DEFAULT_MODEL, show_default=True)
@click.option("--no-normalize", is_flag=True, default=False)
def encode_command(input_path, output_path, model_id, no_normalize) -> None:
    """Embed a {id, text} JSON-Lines file into {id, vector} records."""
    try:
        records = read_texts(input_path)
        model = get_model(model_id)
        vectors = encode_texts(
            model, [text for _, text in records], normalize=not no_normalize
        )
        write_embeddings([identifier for identifier, _ in records], vectors, output_path)
    except EncoderError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"encoded {len(records)} texts (dim {model.dim}) to {output_path}")


@main.command("serve")
@click.option("--port", default=8901, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--model", "model_id", default=DEFAULT_MODEL, show_default=True)
@click.option("--no-normalize", is_flag=True, default=False)
def serve_command(port, host, model_id, no_normalize) -> None:
    """Serve POST /embed on the given port."""
    import uvicorn

    from embed_sidecar.service import create_app

    try:
        model = get_model(model_id)
    except EncoderError as exc:
        raise click.ClickException(str(exc)) from exc
    uvicorn.run(create_app(model, normalize=not no_normalize), host=host, port=port)


@main.command("score")
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True))
@click.option("--output", "output_path", required=True, type=click.Path())
@click.option("--model", "model_id", default=DEFAULT_MODEL, show_default=True)
@click.option(
    "--metrics", default=",".join(SUPPORTED_METRICS), show_default=True,
    help="comma-separated subset of bertscore,alignscore,summac",
)
def score_command(pairs_path, output_path, model_id, metrics) -> None:
    """Score {source, reference, hypothesis} pairs into the external-scorer schema."""
    requested = tuple(m.strip() for m in metrics.split(",") if m.strip())
    try:
        pairs = read_pairs(pairs_path)
        model = get_model(model_id)
        records, means = score_pairs(pairs, model, requested)
        write_scores(records, output_path)
    except (EncoderError, ScorerError) as exc:
        raise click.ClickException(str(exc)) from exc
    summary = ", ".join(f"{m}={means[m]:.4f}" for m in requested)
    click.echo(f"scored {len(pairs)} pairs to {output_path} ({summary})")


if __name__ == "__main__":  # pragma: no cover
    main()
