"""Mixture-of-Agents orchestration.

A pipeline is 1-3 layers (propose, then optional verification, then optional
hallucination detection) followed by a single aggregator call that fuses the
last layer's outputs. Within a layer, agent calls run concurrently; layers are
sequential synchronization points.
"""

from __future__ import annotations

import enum
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from persum.corpus import Thread
from persum.gateway import AgentSpec, Gateway, GatewayError
from persum.parsing import LabeledSpan
from persum.prompting import (
    Exemplar,
    PromptMessages,
    build_task_a_prompt,
    build_task_b_prompt,
    load_template,
)


class Role(enum.Enum):
    PROPOSE = "PROPOSE"
    VERIFY = "VERIFY"
    HALLUCINATION_CHECK = "HALLUCINATION_CHECK"


_ROLE_ORDER = (Role.PROPOSE, Role.VERIFY, Role.HALLUCINATION_CHECK)

_DEFAULT_ROLE_TEMPLATES = {
    Role.VERIFY: "verify_role",
    Role.HALLUCINATION_CHECK: "hallucination_role",
}


class MoaConfigError(ValueError):
    """Raised for structurally invalid pipeline configurations."""


class PipelineError(RuntimeError):
    """A layer or aggregator failure; carries the partial trace."""

    def __init__(self, message: str, trace: "MoaTrace | None" = None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class LayerSpec:
    role: Role
    agents: tuple[AgentSpec, ...]
    role_prompt: str = ""

    def __post_init__(self) -> None:
        if not self.agents:
            raise MoaConfigError("layer must have at least one agent")


@dataclass(frozen=True)
class MoaConfig:
    layers: tuple[LayerSpec, ...]
    aggregator: AgentSpec
    aggregator_prompt: str
    task: str  # "A" | "B"
    include_base_in_downstream: bool = True
    skip_failed_agents: bool = False

    def __post_init__(self) -> None:
        if not (1 <= len(self.layers) <= 3):
            raise MoaConfigError(f"pipeline needs 1-3 layers, got {len(self.layers)}")
        roles = tuple(layer.role for layer in self.layers)
        if roles != _ROLE_ORDER[: len(roles)]:
            raise MoaConfigError(
                "layer roles must follow PROPOSE [, VERIFY [, HALLUCINATION_CHECK]], "
                f"got {[r.value for r in roles]}"
            )
        if self.task not in ("A", "B"):
            raise MoaConfigError(f"task must be 'A' or 'B', got {self.task!r}")


@dataclass
class LayerTrace:
    role: str
    agents: list[str]
    prompts: list[str]
    outputs: list[str]


@dataclass
class MoaTrace:
    layers: list[LayerTrace] = field(default_factory=list)
    aggregator_input: str = ""
    final_output: str = ""

    def to_json(self) -> dict:
        return {
            "layers": [
                {"role": l.role, "agents": l.agents, "prompts": l.prompts, "outputs": l.outputs}
                for l in self.layers
            ],
            "aggregator_input": self.aggregator_input,
            "final_output": self.final_output,
        }


def _upstream_block(upstream: Sequence[str]) -> str:
    parts = []
    for i, text in enumerate(upstream, start=1):
        parts.append(f"### Candidate response {i}\n{text}")
    return "\n\n".join(parts)


def _layer_prompt(
    layer: LayerSpec, base_prompt: PromptMessages, upstream: Sequence[str], include_base: bool
) -> PromptMessages:
    if layer.role is Role.PROPOSE:
        return base_prompt
    role_prompt = layer.role_prompt or load_template(_DEFAULT_ROLE_TEMPLATES[layer.role]).strip()
    sections = [role_prompt, _upstream_block(upstream)]
    if include_base:
        sections.append("### Original task\n" + base_prompt.user)
    return PromptMessages(system=base_prompt.system, user="\n\n".join(sections))


def run_layer(
    gateway: Gateway,
    layer: LayerSpec,
    base_prompt: PromptMessages,
    upstream: Sequence[str] = (),
    include_base: bool = True,
    skip_failed: bool = False,
) -> tuple[list[str], LayerTrace]:
    """Execute one layer; outputs come back in configured agent order."""
    if layer.role is Role.PROPOSE and upstream:
        raise PipelineError("propose layer must not receive upstream outputs")
    if layer.role is not Role.PROPOSE and not upstream:
        raise PipelineError(f"{layer.role.value} layer requires upstream outputs")
    prompt = _layer_prompt(layer, base_prompt, upstream, include_base)

    results: list[str | None] = [None] * len(layer.agents)
    errors: list[tuple[str, Exception]] = []
    with ThreadPoolExecutor(max_workers=max(1, len(layer.agents))) as pool:
        futures = {
            pool.submit(gateway.complete, agent, prompt): i
            for i, agent in enumerate(layer.agents)
        }
        for future, i in futures.items():
            try:
                results[i] = future.result().text
            except GatewayError as exc:
                errors.append((layer.agents[i].name, exc))

    trace = LayerTrace(
        role=layer.role.value,
        agents=[a.name for a in layer.agents],
        prompts=[prompt.user] * len(layer.agents),
        outputs=[r for r in results if r is not None],
    )
    if errors and not skip_failed:
        names = ", ".join(name for name, _ in errors)
        raise PipelineError(f"{layer.role.value} layer: agent failures: {names}")
    outputs = [r for r in results if r is not None]
    if not outputs:
        raise PipelineError(f"{layer.role.value} layer: all agents failed")
    return outputs, trace


def aggregate(
    gateway: Gateway,
    config: MoaConfig,
    final_layer_outputs: Sequence[str],
    base_prompt: PromptMessages,
) -> tuple[str, str]:
    """Fuse the final layer's outputs with one aggregator call.

    Returns (final text, aggregator input) for the trace.
    """
    if not final_layer_outputs:
        raise PipelineError("aggregation requires at least one upstream output")
    aggregator_prompt = config.aggregator_prompt or load_template("aggregator").strip()
    user = "\n\n".join(
        [
            aggregator_prompt,
            _upstream_block(final_layer_outputs),
            "### Original task\n" + base_prompt.user,
        ]
    )
    prompt = PromptMessages(system=base_prompt.system, user=user)
    response = gateway.complete(config.aggregator, prompt)
    return response.text, user


def base_prompt_for(
    config: MoaConfig,
    thread: Thread,
    spans: Sequence[LabeledSpan] | None = None,
    exemplars: Sequence[Exemplar] = (),
    template: str | None = None,
) -> PromptMessages:
    if config.task == "A":
        return build_task_a_prompt(thread, exemplars, template or "task_a_default")
    if spans is None:
        raise PipelineError("Task B pipeline requires spans")
    return build_task_b_prompt(thread, spans, exemplars, template or "task_b_default")


def run_pipeline(
    gateway: Gateway,
    config: MoaConfig,
    thread: Thread,
    spans: Sequence[LabeledSpan] | None = None,
    exemplars: Sequence[Exemplar] = (),
    template: str | None = None,
    trace_path: str | Path | None = None,
) -> tuple[str, MoaTrace]:
    """Run all layers in order, thread outputs forward, then aggregate."""
    base_prompt = base_prompt_for(config, thread, spans, exemplars, template)
    trace = MoaTrace()
    upstream: list[str] = []
    for layer in config.layers:
        try:
            upstream, layer_trace = run_layer(
                gateway,
                layer,
                base_prompt,
                upstream,
                include_base=config.include_base_in_downstream,
                skip_failed=config.skip_failed_agents,
            )
        except PipelineError as exc:
            raise PipelineError(str(exc), trace) from exc
        trace.layers.append(layer_trace)
    try:
        final, aggregator_input = aggregate(gateway, config, upstream, base_prompt)
    except GatewayError as exc:
        raise PipelineError(f"aggregator failed: {exc}", trace) from exc
    trace.aggregator_input = aggregator_input
    trace.final_output = final
    if trace_path is not None:
        with open(trace_path, "a", encoding="utf-8") as handle:
            record = {"thread_id": thread.id, "task": config.task, **trace.to_json()}
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")
    return final, trace


def _agent_from_json(record: dict) -> AgentSpec:
    return AgentSpec(
        name=record["name"],
        model_id=record["model_id"],
        endpoint=record.get("endpoint", "mock://local"),
        temperature=record.get("temperature", 0.0),
        max_tokens=record.get("max_tokens", 1024),
        system_override=record.get("system_override"),
        auth_ref=record.get("auth_ref"),
    )


def load_moa_config(path: str | Path) -> MoaConfig:
    """Read a pipeline description from a JSON file."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    layers = tuple(
        LayerSpec(
            role=Role[layer["role"]],
            agents=tuple(_agent_from_json(a) for a in layer["agents"]),
            role_prompt=layer.get("role_prompt", ""),
        )
        for layer in data["layers"]
    )
    return MoaConfig(
        layers=layers,
        aggregator=_agent_from_json(data["aggregator"]),
        aggregator_prompt=data.get("aggregator_prompt", ""),
        task=data["task"],
        include_base_in_downstream=data.get("include_base_in_downstream", True),
        skip_failed_agents=data.get("skip_failed_agents", False),
    )
