from __future__ import annotations

import logging
from dataclasses import dataclass

from curerec.exceptions import CircuitError
from nanorec.services.model import ModelState, node_param_keys

from .extract import Circuit

logger = logging.getLogger(__name__)

GROUP_FORGET = "forget_specific"
GROUP_RETAIN = "retain_specific"
GROUP_SHARED = "shared"
GROUP_UNTOUCHED = "untouched"


@dataclass(frozen=True)
class ParameterPartition:
    """Parameter keys split by circuit membership of their owning node.

    Embedding and unembedding parameters are always untouched.
    """

    forget_specific: frozenset[str]
    retain_specific: frozenset[str]
    shared: frozenset[str]
    untouched: frozenset[str]
    forget_nodes: frozenset[str] = frozenset()
    retain_nodes: frozenset[str] = frozenset()
    shared_nodes: frozenset[str] = frozenset()

    def group(self, name: str) -> frozenset[str]:
        return getattr(self, name)

    @property
    def trainable(self) -> frozenset[str]:
        return self.forget_specific | self.retain_specific | self.shared

    def validate(self, all_keys) -> None:
        groups = (self.forget_specific, self.retain_specific, self.shared, self.untouched)
        if sum(len(g) for g in groups) != len(frozenset().union(*groups)):
            raise CircuitError("parameter groups overlap")
        if frozenset().union(*groups) != frozenset(all_keys):
            raise CircuitError("parameter groups do not cover the model")

    def summary(self) -> dict:
        return {
            "nodes": {
                GROUP_FORGET: sorted(self.forget_nodes),
                GROUP_RETAIN: sorted(self.retain_nodes),
                GROUP_SHARED: sorted(self.shared_nodes),
            },
            "parameters": {
                GROUP_FORGET: len(self.forget_specific),
                GROUP_RETAIN: len(self.retain_specific),
                GROUP_SHARED: len(self.shared),
                GROUP_UNTOUCHED: len(self.untouched),
            },
        }


def partition(forget_circuit: Circuit, retain_circuit: Circuit, state: ModelState) -> ParameterPartition:
    components = set(state.graph.component_nodes)
    in_forget = forget_circuit.nodes & components
    in_retain = retain_circuit.nodes & components
    forget_nodes = frozenset(in_forget - in_retain)
    retain_nodes = frozenset(in_retain - in_forget)
    shared_nodes = frozenset(in_forget & in_retain)

    def keys(nodes) -> frozenset[str]:
        return frozenset(key for node in nodes for key in node_param_keys(node, state.config))

    forget_keys, retain_keys, shared_keys = keys(forget_nodes), keys(retain_nodes), keys(shared_nodes)
    result = ParameterPartition(
        forget_specific=forget_keys,
        retain_specific=retain_keys,
        shared=shared_keys,
        untouched=frozenset(state.params) - forget_keys - retain_keys - shared_keys,
        forget_nodes=forget_nodes,
        retain_nodes=retain_nodes,
        shared_nodes=shared_nodes,
    )
    result.validate(state.params)
    logger.info(
        "Partitioned nodes: %d forget-specific, %d retain-specific, %d shared",
        len(forget_nodes),
        len(retain_nodes),
        len(shared_nodes),
    )
    return result
