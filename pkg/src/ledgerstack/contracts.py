"""Deterministic contract catalog with step metering.

Contracts here are not user-supplied bytecode. The catalog is a fixed set
of audited routines; deployment instantiates one with init parameters and
derives its address from code id, canonical init bytes, and deploy
height, so the same deployment at a different height gets a different
address.

Execution is metered: deploying costs a flat 10 steps, invoking costs 10
plus 1 per storage access (reads and writes alike; init-time storage is
covered by the flat deploy charge). Some stateless routines charge per
input row instead, noted in their cost notes. Exceeding the budget raises
OutOfSteps with the budget fully consumed.

Invocation is atomic. A method runs against a copy of the instance
storage and the copy is committed only on success; any failure, including
running out of steps, leaves the stored state byte-for-byte unchanged
while the steps stay spent.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from . import crypto
from .bank_ledger import classify_ifrs9
from .escrow import DISPOSITIONS as _ESCROW_DISPOSITIONS
from .escrow import resolve_dispositions
from .settlement import (
    DVP,
    FOP,
    SettlementError,
    SettlementInstruction,
    net_over_dicts,
    settle_dvp,
    settle_fop,
)

FIXED_DEPLOY_STEPS = 10
FIXED_INVOKE_STEPS = 10

ACCOUNT_KINDS = ("main", "subsidiary", "zba", "imprest", "transit", "correspondent")


class ContractsError(Exception):
    pass


class UnknownCode(ContractsError):
    pass


class UnknownAddress(ContractsError):
    pass


class InvalidParams(ContractsError):
    pass


class OutOfSteps(ContractsError):
    pass


class Dead(ContractsError):
    pass


class ContractError(ContractsError):
    """Raised by contract code itself; reason is a short machine tag."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class StepBudget:
    """Hard execution limit. Overrunning consumes the remainder and
    raises; a failed call is still paid for."""

    def __init__(self, limit: int):
        if limit < 0:
            raise ValueError("step limit must be non-negative")
        self.limit = limit
        self.used = 0

    @property
    def remaining(self) -> int:
        return self.limit - self.used

    def consume(self, n: int = 1) -> None:
        if n < 0:
            raise ValueError("cannot consume negative steps")
        if self.used + n > self.limit:
            self.used = self.limit
            raise OutOfSteps(f"step budget of {self.limit} exhausted")
        self.used += n


class MeteredStorage:
    """Byte-valued key store charging one step per access."""

    def __init__(self, data: dict[str, bytes], budget: StepBudget | None):
        self._data = data
        self._budget = budget

    def _charge(self) -> None:
        if self._budget is not None:
            self._budget.consume(1)

    def get(self, key: str) -> bytes | None:
        self._charge()
        return self._data.get(key)

    def __setitem__(self, key: str, value: bytes) -> None:
        if not isinstance(value, bytes):
            raise TypeError("storage values are bytes")
        self._charge()
        self._data[key] = value

    def __delitem__(self, key: str) -> None:
        self._charge()
        del self._data[key]

    def __contains__(self, key: str) -> bool:
        self._charge()
        return key in self._data


@dataclass
class InvokeContext:
    address: bytes
    args: dict[str, Any]
    storage: MeteredStorage
    budget: StepBudget
    height: int
    destroyed: bool = False

    def self_destruct(self) -> None:
        self.destroyed = True

    def charge(self, n: int = 1) -> None:
        self.budget.consume(n)

    # storage holds bytes; routines store canonical json
    def load(self, key: str, default: Any = None) -> Any:
        raw = self.storage.get(key)
        if raw is None:
            return default
        return json.loads(raw.decode("utf-8"))

    def store(self, key: str, obj: Any) -> None:
        self.storage[key] = crypto.canonical_json(obj)


@dataclass(frozen=True)
class ContractCode:
    code_id: str
    description: str
    cost_note: str
    init: Callable[[InvokeContext], None]
    methods: Mapping[str, Callable[[InvokeContext], Any]]


@dataclass
class _Instance:
    code_id: str
    storage: dict[str, bytes]
    height: int
    dead: bool = False


# ---------------------------------------------------------------------------
# counter


def _counter_init(ctx: InvokeContext) -> None:
    start = ctx.args.get("start", 0)
    if not isinstance(start, int) or isinstance(start, bool):
        raise InvalidParams("start must be an integer")
    ctx.store("value", start)


def _counter_inc(ctx: InvokeContext) -> Any:
    step = ctx.args.get("step", 1)
    if not isinstance(step, int) or isinstance(step, bool):
        raise ContractError("bad_step")
    value = ctx.load("value") + step
    ctx.store("value", value)
    return {"value": value}


def _counter_get(ctx: InvokeContext) -> Any:
    return {"value": ctx.load("value")}


def _counter_destroy(ctx: InvokeContext) -> Any:
    ctx.self_destruct()
    return {"destroyed": True}


# ---------------------------------------------------------------------------
# conditional_payment


def _condpay_init(ctx: InvokeContext) -> None:
    args = ctx.args
    for key in ("payer", "payee"):
        if not isinstance(args.get(key), str) or not args[key]:
            raise InvalidParams(f"{key} must be a non-empty string")
    amount = args.get("amount")
    if not isinstance(amount, int) or isinstance(amount, bool) or amount <= 0:
        raise InvalidParams("amount must be a positive integer")
    cond = args.get("condition_hash")
    try:
        raw = bytes.fromhex(cond)
    except (TypeError, ValueError):
        raise InvalidParams("condition_hash must be hex") from None
    if len(raw) != crypto.HASH_LEN:
        raise InvalidParams("condition_hash must be 32 bytes")
    ctx.store("payer", args["payer"])
    ctx.store("payee", args["payee"])
    ctx.store("amount", amount)
    ctx.store("condition_hash", cond.lower())
    ctx.store("paid", False)


def _condpay_claim(ctx: InvokeContext) -> Any:
    if ctx.load("paid"):
        raise ContractError("already_paid")
    try:
        preimage = bytes.fromhex(ctx.args.get("preimage", ""))
    except ValueError:
        raise ContractError("bad_preimage") from None
    if crypto.sha256d(preimage).hex() != ctx.load("condition_hash"):
        raise ContractError("bad_preimage")
    ctx.store("paid", True)
    return {
        "pay": {
            "from": ctx.load("payer"),
            "to": ctx.load("payee"),
            "amount": ctx.load("amount"),
        }
    }


def _condpay_status(ctx: InvokeContext) -> Any:
    return {"paid": ctx.load("paid"), "amount": ctx.load("amount")}


# ---------------------------------------------------------------------------
# zba_sweep


def plan_sweep(
    balances: Mapping[str, int],
    kinds: Mapping[str, str],
    caps: Mapping[str, int],
) -> list[dict[str, Any]]:
    """Plan end-of-day concentration transfers.

    Zero-balance, transit, and correspondent accounts sweep fully into the
    main account; imprest accounts are brought back to their cap in either
    direction; subsidiary accounts keep their balances. Collections run
    before refills so refills draw on the concentrated balance. Refills
    never overdraw the main account.
    """
    mains = [a for a in sorted(kinds) if kinds[a] == "main"]
    if len(mains) != 1:
        raise ContractError("need_exactly_one_main")
    main = mains[0]
    for acct in kinds:
        if kinds[acct] not in ACCOUNT_KINDS:
            raise ContractError(f"unknown_kind:{kinds[acct]}")
    transfers: list[dict[str, Any]] = []
    main_bal = balances.get(main, 0)
    for acct in sorted(kinds):
        if acct == main:
            continue
        kind = kinds[acct]
        bal = balances.get(acct, 0)
        if kind in ("zba", "transit", "correspondent"):
            if bal > 0:
                transfers.append({"from": acct, "to": main, "amount": bal})
                main_bal += bal
        elif kind == "imprest":
            cap = caps.get(acct)
            if cap is None or cap < 0:
                raise ContractError(f"cap_missing:{acct}")
            if bal > cap:
                transfers.append({"from": acct, "to": main, "amount": bal - cap})
                main_bal += bal - cap
    for acct in sorted(kinds):
        if kinds[acct] != "imprest":
            continue
        bal = balances.get(acct, 0)
        cap = caps[acct]
        if bal < cap:
            amount = min(cap - bal, main_bal)
            if amount > 0:
                transfers.append({"from": main, "to": acct, "amount": amount})
                main_bal -= amount
    return transfers


def _sweep_init(ctx: InvokeContext) -> None:
    if ctx.args:
        raise InvalidParams("zba_sweep takes no init parameters")


def _sweep_run(ctx: InvokeContext) -> Any:
    balances = ctx.args.get("balances")
    kinds = ctx.args.get("kinds")
    caps = ctx.args.get("caps", {})
    if not isinstance(balances, dict) or not isinstance(kinds, dict):
        raise ContractError("invalid_args")
    ctx.charge(len(kinds))
    return {"transfers": plan_sweep(balances, kinds, caps)}


# ---------------------------------------------------------------------------
# ifrs9_classify


def _classify_init(ctx: InvokeContext) -> None:
    if ctx.args:
        raise InvalidParams("ifrs9_classify takes no init parameters")


def _classify_run(ctx: InvokeContext) -> Any:
    solely = ctx.args.get("contractual_cash_flows_only")
    model = ctx.args.get("business_model")
    if not isinstance(solely, bool) or not isinstance(model, str):
        raise ContractError("invalid_args")
    ctx.charge(1)
    return {"category": classify_ifrs9(solely, model)}


# ---------------------------------------------------------------------------
# net / settle


def _net_init(ctx: InvokeContext) -> None:
    if ctx.args:
        raise InvalidParams("net takes no init parameters")


def _net_run(ctx: InvokeContext) -> Any:
    trades = ctx.args.get("trades")
    if not isinstance(trades, list):
        raise ContractError("invalid_args")
    ctx.charge(len(trades))
    try:
        return {"positions": net_over_dicts(trades)}
    except (SettlementError, KeyError, TypeError, ValueError):
        raise ContractError("invalid_trades") from None


def _settle_init(ctx: InvokeContext) -> None:
    if ctx.args:
        raise InvalidParams("settle takes no init parameters")


def _settle_run(ctx: InvokeContext) -> Any:
    holdings_in = ctx.args.get("holdings")
    row = ctx.args.get("instruction")
    if not isinstance(holdings_in, dict) or not isinstance(row, dict):
        raise ContractError("invalid_args")
    ctx.charge(len(holdings_in))
    holdings = json.loads(crypto.canonical_json(holdings_in).decode("utf-8"))
    try:
        instr = SettlementInstruction(
            id=str(row["id"]),
            from_member=str(row["from"]),
            to_member=str(row["to"]),
            asset=str(row["asset"]),
            quantity=int(row["quantity"]),
            cash=int(row.get("cash", 0)),
            mode=str(row.get("mode", DVP)),
            unpaid_cash=int(row.get("unpaid_cash", 0)),
        )
    except (SettlementError, KeyError, TypeError, ValueError):
        raise ContractError("invalid_instruction") from None
    for member in holdings:
        holdings.setdefault(member, {})
        holdings[member].setdefault("cash", 0)
        holdings[member].setdefault("assets", {})
    result = settle_dvp(holdings, instr) if instr.mode == DVP else settle_fop(holdings, instr)
    return {
        "holdings": holdings,
        "result": {"id": result.instruction_id, "status": result.status, "reason": result.reason},
    }


# ---------------------------------------------------------------------------
# escrow


def _escrow_init(ctx: InvokeContext) -> None:
    keys = {}
    for role in ("buyer", "seller", "arbiter"):
        value = ctx.args.get(role)
        try:
            raw = bytes.fromhex(value)
        except (TypeError, ValueError):
            raise InvalidParams(f"{role} must be a hex public key") from None
        if len(raw) != 32:
            raise InvalidParams(f"{role} must be a 32-byte key")
        keys[role] = value.lower()
    if len(set(keys.values())) != 3:
        raise InvalidParams("buyer, seller, and arbiter keys must be distinct")
    amount = ctx.args.get("amount")
    fee = ctx.args.get("fee", 0)
    if not isinstance(amount, int) or isinstance(amount, bool) or amount <= 0:
        raise InvalidParams("amount must be a positive integer")
    if not isinstance(fee, int) or isinstance(fee, bool) or fee < 0 or fee > amount:
        raise InvalidParams("fee must be between 0 and amount")
    for role, value in keys.items():
        ctx.store(role, value)
    ctx.store("amount", amount)
    ctx.store("fee", fee)
    ctx.store("votes", [])
    ctx.store("status", "open")
    ctx.store("outcome", None)


def _escrow_sign(ctx: InvokeContext) -> Any:
    if ctx.load("status") != "open":
        raise ContractError("already_final")
    disposition = ctx.args.get("disposition")
    if disposition not in _ESCROW_DISPOSITIONS:
        raise ContractError("bad_disposition")
    signer = str(ctx.args.get("signer", "")).lower()
    roles = {ctx.load(role): role for role in ("buyer", "seller", "arbiter")}
    role = roles.get(signer)
    if role is None:
        raise ContractError("not_party")
    try:
        pk = bytes.fromhex(signer)
        signature = bytes.fromhex(ctx.args.get("signature", ""))
    except ValueError:
        raise ContractError("bad_signature") from None
    if not crypto.verify(pk, ctx.address + disposition.encode("utf-8"), signature):
        raise ContractError("bad_signature")
    votes: list[list[str]] = ctx.load("votes")
    for prev_role, prev_disposition in votes:
        if prev_role == role:
            if prev_disposition != disposition:
                raise ContractError("conflicting_signature")
            return {"status": "open", "votes": len(votes)}
    votes.append([role, disposition])
    ctx.store("votes", votes)
    outcome = resolve_dispositions(
        [(r, d) for r, d in votes], ctx.load("amount"), ctx.load("fee")
    )
    if outcome is None:
        return {"status": "open", "votes": len(votes)}
    ctx.store("status", outcome["status"])
    ctx.store("outcome", outcome)
    return dict(outcome)


def _escrow_status(ctx: InvokeContext) -> Any:
    return {
        "status": ctx.load("status"),
        "votes": len(ctx.load("votes")),
        "outcome": ctx.load("outcome"),
    }


# ---------------------------------------------------------------------------
# catalog

CATALOG: dict[str, ContractCode] = {
    code.code_id: code
    for code in (
        ContractCode(
            code_id="counter",
            description="integer counter with settable start and step",
            cost_note="deploy 10; inc 12; get 11; destroy 10",
            init=_counter_init,
            methods={"inc": _counter_inc, "get": _counter_get, "destroy": _counter_destroy},
        ),
        ContractCode(
            code_id="conditional_payment",
            description="single-shot hash-locked payment directive",
            cost_note="deploy 10; claim 10 + 6 storage; status 10 + 2 storage",
            init=_condpay_init,
            methods={"claim": _condpay_claim, "status": _condpay_status},
        ),
        ContractCode(
            code_id="zba_sweep",
            description="plans end-of-day concentration transfers into the main account",
            cost_note="deploy 10; sweep 10 + 1 per account",
            init=_sweep_init,
            methods={"sweep": _sweep_run},
        ),
        ContractCode(
            code_id="ifrs9_classify",
            description="classifies a financial asset into a measurement category",
            cost_note="deploy 10; classify 11",
            init=_classify_init,
            methods={"classify": _classify_run},
        ),
        ContractCode(
            code_id="net",
            description="multilateral netting of trade lists into member positions",
            cost_note="deploy 10; net 10 + 1 per trade",
            init=_net_init,
            methods={"net": _net_run},
        ),
        ContractCode(
            code_id="settle",
            description="settles one instruction against a holdings snapshot",
            cost_note="deploy 10; settle 10 + 1 per member",
            init=_settle_init,
            methods={"settle": _settle_run},
        ),
        ContractCode(
            code_id="escrow",
            description="two-of-three signed-disposition escrow returning payout directives",
            cost_note="deploy 10; sign 10 + ~10 storage; status 10 + 3 storage",
            init=_escrow_init,
            methods={"sign": _escrow_sign, "status": _escrow_status},
        ),
    )
}


def contract_listing() -> list[dict[str, str]]:
    return [
        {
            "code_id": code.code_id,
            "description": code.description,
            "cost_note": code.cost_note,
        }
        for code in sorted(CATALOG.values(), key=lambda c: c.code_id)
    ]


def derive_address(code_id: str, init_params: Any, height: int) -> bytes:
    return crypto.sha256d(
        code_id.encode("utf-8")
        + crypto.canonical_json(init_params)
        + struct.pack(">Q", height)
    )


class ContractState:
    """All deployed instances plus deploy/invoke entry points."""

    def __init__(self):
        self._instances: dict[bytes, _Instance] = {}

    def addresses(self) -> list[bytes]:
        return sorted(self._instances)

    def instance_code(self, address: bytes) -> str:
        inst = self._instances.get(address)
        if inst is None:
            raise UnknownAddress(address.hex())
        return inst.code_id

    def is_dead(self, address: bytes) -> bool:
        inst = self._instances.get(address)
        if inst is None:
            raise UnknownAddress(address.hex())
        return inst.dead

    def storage_snapshot(self, address: bytes) -> dict[str, bytes]:
        inst = self._instances.get(address)
        if inst is None:
            raise UnknownAddress(address.hex())
        return dict(inst.storage)

    def deploy(
        self, code_id: str, init_params: Any, budget: StepBudget, height: int
    ) -> bytes:
        code = CATALOG.get(code_id)
        if code is None:
            raise UnknownCode(f"no contract code {code_id!r}")
        budget.consume(FIXED_DEPLOY_STEPS)
        address = derive_address(code_id, init_params, height)
        if address in self._instances:
            raise ContractError("already_deployed")
        storage: dict[str, bytes] = {}
        ctx = InvokeContext(
            address=address,
            args=dict(init_params) if isinstance(init_params, Mapping) else {},
            storage=MeteredStorage(storage, None),
            budget=budget,
            height=height,
        )
        code.init(ctx)
        self._instances[address] = _Instance(code_id=code_id, storage=storage, height=height)
        return address

    def invoke(
        self, address: bytes, method: str, args: Mapping[str, Any], budget: StepBudget
    ) -> Any:
        inst = self._instances.get(address)
        if inst is None:
            raise UnknownAddress(address.hex())
        if inst.dead:
            raise Dead(f"contract at {address.hex()} was destroyed")
        code = CATALOG[inst.code_id]
        budget.consume(FIXED_INVOKE_STEPS)
        fn = code.methods.get(method)
        if fn is None:
            raise ContractError("unknown_method")
        # run against a copy; commit only on success
        work = dict(inst.storage)
        ctx = InvokeContext(
            address=address,
            args=dict(args),
            storage=MeteredStorage(work, budget),
            budget=budget,
            height=inst.height,
        )
        try:
            result = fn(ctx)
        except ContractsError:
            raise
        except Exception as exc:
            raise ContractError(f"contract_fault:{type(exc).__name__}") from exc
        inst.storage = work
        if ctx.destroyed:
            inst.dead = True
        return result
