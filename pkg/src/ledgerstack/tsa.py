"""Treasury single account structure over a permissioned chain.

One main account concentrates government cash. Around it sit subsidiary
ledgers, zero-balance accounts, imprest floats with fixed caps, transit
collection accounts, and correspondent accounts; correspondents sweep
like transit accounts. Every balance change is recorded as a signed
transaction, batched into one block per business day, so the whole
account state replays from the chain alone.

The end-of-day sweep is not hand-rolled here: the ledger deploys the
zba_sweep contract once and asks it to plan the concentration transfers
from the day's closing balances, then applies and records the plan.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

from . import chain as chain_mod
from . import contracts as contracts_mod
from .chain import Block, Chain, ChainConfig, Transaction
from .crypto import keygen, sign

KINDS = contracts_mod.ACCOUNT_KINDS

KIND_MAIN = "main"
KIND_SUBSIDIARY = "subsidiary"
KIND_ZBA = "zba"
KIND_IMPREST = "imprest"
KIND_TRANSIT = "transit"
KIND_CORRESPONDENT = "correspondent"

TX_OPEN = "tsa_open"
TX_RECEIPT = "tsa_receipt"
TX_DISBURSEMENT = "tsa_disbursement"
TX_SWEEP = "tsa_sweep"
TX_DAY_CLOSE = "tsa_day_close"

DEFAULT_OPERATOR_SEED = b"\x42" * 32


class TsaError(Exception):
    pass


class DuplicateId(TsaError):
    pass


class UnknownAccount(TsaError):
    pass


class CapMissing(TsaError):
    pass


class SecondMain(TsaError):
    pass


class NonPositiveAmount(TsaError):
    pass


class Overdraft(TsaError):
    pass


@dataclass
class TsaAccount:
    id: str
    kind: str
    balance: int = 0
    cap: int | None = None


@dataclass(frozen=True)
class BufferStatus:
    ok: bool
    required: int
    available: int
    gap: int  # 0 when ok, else the shortfall


class TsaLedger:
    def __init__(self, operator_seed: bytes = DEFAULT_OPERATOR_SEED, genesis_time: int = 0):
        self.operator = keygen(operator_seed)
        self.chain = Chain(
            ChainConfig(mode="quorum", validators=(self.operator.public,), quorum_m=1),
            genesis_time=genesis_time,
        )
        self.accounts: dict[str, TsaAccount] = {}
        self.day = 0
        self.pending_txs: list[Transaction] = []
        self._contracts = contracts_mod.ContractState()
        self._sweep_addr = self._contracts.deploy(
            "zba_sweep", {}, contracts_mod.StepBudget(limit=contracts_mod.FIXED_DEPLOY_STEPS), height=0
        )

    # -- recording ---------------------------------------------------------

    def _emit(self, kind: str, payload: dict[str, Any]) -> Transaction:
        tx = Transaction.create(kind, payload, self.operator)
        self.pending_txs.append(tx)
        return tx

    def _get(self, acct_id: str) -> TsaAccount:
        acct = self.accounts.get(acct_id)
        if acct is None:
            raise UnknownAccount(f"no account {acct_id!r}")
        return acct

    @property
    def main_id(self) -> str | None:
        for acct in self.accounts.values():
            if acct.kind == KIND_MAIN:
                return acct.id
        return None

    def open_account(self, acct_id: str, kind: str, cap: int | None = None) -> TsaAccount:
        if acct_id in self.accounts:
            raise DuplicateId(f"account {acct_id!r} already exists")
        if kind not in KINDS:
            raise TsaError(f"unknown account kind {kind!r}")
        if kind == KIND_MAIN and self.main_id is not None:
            raise SecondMain("the structure has exactly one main account")
        if kind == KIND_IMPREST:
            if cap is None or cap <= 0:
                raise CapMissing(f"imprest account {acct_id!r} needs a positive cap")
        elif cap is not None:
            raise TsaError("only imprest accounts carry a cap")
        acct = TsaAccount(id=acct_id, kind=kind, cap=cap)
        self.accounts[acct_id] = acct
        self._emit(TX_OPEN, {"id": acct_id, "kind": kind, "cap": cap, "day": self.day})
        return acct

    def record_receipt(self, acct_id: str, amount: int, memo: str = "") -> int:
        acct = self._get(acct_id)
        if amount <= 0:
            raise NonPositiveAmount("receipts must be positive")
        acct.balance += amount
        self._emit(
            TX_RECEIPT,
            {"id": acct_id, "amount": amount, "memo": memo, "day": self.day},
        )
        return acct.balance

    def record_disbursement(self, acct_id: str, amount: int, memo: str = "") -> int:
        acct = self._get(acct_id)
        if amount <= 0:
            raise NonPositiveAmount("disbursements must be positive")
        if acct.balance < amount:
            raise Overdraft(
                f"account {acct_id!r} holds {acct.balance}, cannot pay {amount}"
            )
        acct.balance -= amount
        self._emit(
            TX_DISBURSEMENT,
            {"id": acct_id, "amount": amount, "memo": memo, "day": self.day},
        )
        return acct.balance

    # -- end of day --------------------------------------------------------

    def end_of_day_sweep(self) -> list[dict[str, Any]]:
        """Plan transfers through the zba_sweep contract, apply, record."""
        if self.main_id is None:
            raise TsaError("cannot sweep without a main account")
        balances = {a.id: a.balance for a in self.accounts.values()}
        kinds = {a.id: a.kind for a in self.accounts.values()}
        caps = {a.id: a.cap for a in self.accounts.values() if a.cap is not None}
        budget = contracts_mod.StepBudget(
            limit=contracts_mod.FIXED_INVOKE_STEPS + len(kinds) + 10
        )
        plan = self._contracts.invoke(
            self._sweep_addr,
            "sweep",
            {"balances": balances, "kinds": kinds, "caps": caps},
            budget,
        )["transfers"]
        for row in plan:
            src, dst = self._get(row["from"]), self._get(row["to"])
            if src.balance < row["amount"]:  # pragma: no cover - plan never overdraws
                raise Overdraft(f"sweep would overdraw {src.id!r}")
            src.balance -= row["amount"]
            dst.balance += row["amount"]
        if plan:
            self._emit(TX_SWEEP, {"transfers": plan, "day": self.day})
        return plan

    def check_buffer(self, requirement: int) -> BufferStatus:
        """Is the concentrated balance enough for tomorrow's obligations?"""
        if requirement < 0:
            raise TsaError("requirement must be non-negative")
        main = self.main_id
        available = self._get(main).balance if main else 0
        gap = max(0, requirement - available)
        return BufferStatus(ok=gap == 0, required=requirement, available=available, gap=gap)

    def consolidated_position(self) -> int:
        return sum(a.balance for a in self.accounts.values())

    def day_close(self) -> Block:
        """Seal the day's transactions into one block and advance the day.

        The closing snapshot rides in the day-close transaction, so replay
        can cross-check itself against what was recorded at the time.
        """
        self._emit(
            TX_DAY_CLOSE,
            {
                "day": self.day,
                "consolidated": self.consolidated_position(),
                "balances": {a.id: a.balance for a in sorted(self.accounts.values(), key=lambda a: a.id)},
            },
        )
        block = self.chain.build_block(self.pending_txs, wall_time=self.day)
        approval = chain_mod.Approval(
            self.operator.public, sign(self.operator.secret, block.block_id)
        )
        accepted = self.chain.approve_and_append(block, [approval])
        self.pending_txs = []
        self.day += 1
        return accepted

    def state(self) -> dict[str, Any]:
        return {
            "day": self.day,
            "accounts": {
                a.id: {"kind": a.kind, "cap": a.cap, "balance": a.balance}
                for a in sorted(self.accounts.values(), key=lambda a: a.id)
            },
        }


def replay(blocks: Sequence[Block], config: ChainConfig) -> dict[str, Any]:
    """Rebuild account state purely from the recorded transactions.

    The chain is verified first; the fold then applies each transaction in
    order and cross-checks every day-close snapshot against the rebuilt
    balances, so either the history is sound and complete or this raises.
    """
    result = chain_mod.verify_chain(blocks, config)
    if not result.valid:
        raise TsaError(
            f"chain invalid at height {result.first_bad_height}: {result.reason}"
        )
    accounts: dict[str, dict[str, Any]] = {}
    day = 0
    for block in blocks:
        for tx in block.txs:
            payload = tx.payload_obj()
            if tx.kind == TX_OPEN:
                if payload["id"] in accounts:
                    raise TsaError(f"replay: duplicate open for {payload['id']!r}")
                accounts[payload["id"]] = {
                    "kind": payload["kind"],
                    "cap": payload["cap"],
                    "balance": 0,
                }
            elif tx.kind == TX_RECEIPT:
                accounts[payload["id"]]["balance"] += payload["amount"]
            elif tx.kind == TX_DISBURSEMENT:
                accounts[payload["id"]]["balance"] -= payload["amount"]
            elif tx.kind == TX_SWEEP:
                for row in payload["transfers"]:
                    accounts[row["from"]]["balance"] -= row["amount"]
                    accounts[row["to"]]["balance"] += row["amount"]
            elif tx.kind == TX_DAY_CLOSE:
                rebuilt = {aid: acc["balance"] for aid, acc in accounts.items()}
                if payload["balances"] != rebuilt:
                    raise TsaError(
                        f"replay mismatch on day {payload['day']}: "
                        f"recorded {payload['balances']}, rebuilt {rebuilt}"
                    )
                day = payload["day"] + 1
            else:
                raise TsaError(f"replay: unknown transaction kind {tx.kind!r}")
    return {
        "day": day,
        "accounts": {aid: dict(acc) for aid, acc in sorted(accounts.items())},
    }
