"""Two-of-three escrow with signed disposition votes.

A buyer locks funds at a derived escrow address. Three keys are party to
the arrangement: buyer, seller, and a neutral arbiter. Each party may sign
exactly one disposition, either to_seller or to_buyer, over the bytes
(address || disposition). The first disposition backed by two distinct
parties wins and the escrow finalizes immediately.

If the two backers are buyer and seller the escrow resolves amicably:
released (to_seller) or refunded (to_buyer), full amount, no fee. If the
arbiter is one of the two backers the outcome is arbitrated: the winning
side receives amount - fee and the arbiter keeps the fee.

Balances live in a flat map from key bytes to integer cash; the escrow
address itself holds the locked amount, so the map total is conserved
through every state change.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from . import crypto

TO_SELLER = "to_seller"
TO_BUYER = "to_buyer"
DISPOSITIONS = (TO_SELLER, TO_BUYER)

OPEN = "open"
RELEASED = "released"
REFUNDED = "refunded"
ARBITRATED = "arbitrated"

BUYER = "buyer"
SELLER = "seller"
ARBITER = "arbiter"


class EscrowError(Exception):
    pass


class DuplicateKey(EscrowError):
    pass


class FeeTooLarge(EscrowError):
    pass


class InsufficientFunds(EscrowError):
    pass


class NotParty(EscrowError):
    pass


class BadSignature(EscrowError):
    pass


class AlreadyFinal(EscrowError):
    pass


class ConflictingSignature(EscrowError):
    pass


class NotReady(EscrowError):
    pass


def resolve_dispositions(
    events: Sequence[tuple[str, str]], amount: int, fee: int
) -> dict | None:
    """Decide the outcome from verified votes in arrival order.

    Each event is (role, disposition) with role one of buyer, seller,
    arbiter; a role appears at most once. Returns None while no
    disposition has two distinct backers. Zero payouts are omitted.
    """
    backers: dict[str, list[str]] = {}
    for role, disposition in events:
        if disposition not in DISPOSITIONS:
            raise EscrowError(f"unknown disposition {disposition!r}")
        if role not in (BUYER, SELLER, ARBITER):
            raise EscrowError(f"unknown role {role!r}")
        rows = backers.setdefault(disposition, [])
        if role in rows:
            continue
        rows.append(role)
        if len(rows) == 2:
            winner_role = SELLER if disposition == TO_SELLER else BUYER
            if ARBITER in rows:
                status = ARBITRATED
                payouts = {winner_role: amount - fee, ARBITER: fee}
            else:
                status = RELEASED if disposition == TO_SELLER else REFUNDED
                payouts = {winner_role: amount}
            return {
                "status": status,
                "disposition": disposition,
                "payouts": {k: v for k, v in payouts.items() if v > 0},
            }
    return None


def derive_address(
    buyer_pk: bytes,
    seller_pk: bytes,
    arbiter_pk: bytes,
    amount: int,
    fee: int,
    nonce: int,
) -> bytes:
    doc = {
        "buyer": buyer_pk.hex(),
        "seller": seller_pk.hex(),
        "arbiter": arbiter_pk.hex(),
        "amount": amount,
        "fee": fee,
        "nonce": nonce,
    }
    return crypto.sha256d(crypto.canonical_json(doc))


def signing_bytes(address: bytes, disposition: str) -> bytes:
    """What a party signs to vote: escrow address then the disposition
    string as utf-8."""
    return address + disposition.encode("utf-8")


Balances = dict[bytes, int]


@dataclass
class Escrow:
    address: bytes
    buyer_pk: bytes
    seller_pk: bytes
    arbiter_pk: bytes
    amount: int
    fee: int
    nonce: int
    status: str = OPEN
    votes: list[tuple[bytes, str]] = field(default_factory=list)
    outcome: dict | None = None

    def role_of(self, pk: bytes) -> str | None:
        if pk == self.buyer_pk:
            return BUYER
        if pk == self.seller_pk:
            return SELLER
        if pk == self.arbiter_pk:
            return ARBITER
        return None

    def pk_of(self, role: str) -> bytes:
        return {
            BUYER: self.buyer_pk,
            SELLER: self.seller_pk,
            ARBITER: self.arbiter_pk,
        }[role]


def open_escrow(
    balances: Balances,
    buyer_pk: bytes,
    seller_pk: bytes,
    arbiter_pk: bytes,
    amount: int,
    fee: int,
    nonce: int = 0,
) -> Escrow:
    """Lock the buyer's funds at the escrow address."""
    if len({buyer_pk, seller_pk, arbiter_pk}) != 3:
        raise DuplicateKey("buyer, seller, and arbiter keys must be distinct")
    if amount <= 0:
        raise EscrowError("escrow amount must be positive")
    if fee < 0:
        raise EscrowError("fee must be non-negative")
    if fee > amount:
        raise FeeTooLarge(f"fee {fee} exceeds escrow amount {amount}")
    if balances.get(buyer_pk, 0) < amount:
        raise InsufficientFunds(
            f"buyer holds {balances.get(buyer_pk, 0)}, needs {amount}"
        )
    address = derive_address(buyer_pk, seller_pk, arbiter_pk, amount, fee, nonce)
    balances[buyer_pk] -= amount
    balances[address] = balances.get(address, 0) + amount
    return Escrow(
        address=address,
        buyer_pk=buyer_pk,
        seller_pk=seller_pk,
        arbiter_pk=arbiter_pk,
        amount=amount,
        fee=fee,
        nonce=nonce,
    )


def sign_disposition(
    balances: Balances,
    escrow: Escrow,
    signer_pk: bytes,
    signature: bytes,
    disposition: str,
) -> Escrow:
    """Record one party's vote; finalizes the escrow at the second
    distinct backer of a disposition.

    A party may re-sign its own disposition (no-op) but never the
    opposite one. Votes on a finalized escrow are rejected.
    """
    if escrow.status != OPEN:
        raise AlreadyFinal(f"escrow is {escrow.status}")
    if disposition not in DISPOSITIONS:
        raise EscrowError(f"unknown disposition {disposition!r}")
    role = escrow.role_of(signer_pk)
    if role is None:
        raise NotParty("signer is not a party to this escrow")
    if not crypto.verify(signer_pk, signing_bytes(escrow.address, disposition), signature):
        raise BadSignature(f"invalid {disposition} signature from {role}")
    for prev_pk, prev_disposition in escrow.votes:
        if prev_pk == signer_pk:
            if prev_disposition != disposition:
                raise ConflictingSignature(
                    f"{role} already signed {prev_disposition}"
                )
            return escrow
    escrow.votes.append((signer_pk, disposition))
    outcome = resolve_dispositions(
        [(escrow.role_of(pk), d) for pk, d in escrow.votes],
        escrow.amount,
        escrow.fee,
    )
    if outcome is not None:
        _apply_outcome(balances, escrow, outcome)
    return escrow


def finalize(balances: Balances, escrow: Escrow) -> dict:
    """Explicit finalize for callers that batch votes.

    sign_disposition already finalizes at the threshold, so this either
    reports the recorded outcome or raises NotReady.
    """
    if escrow.status != OPEN:
        return dict(escrow.outcome or {})
    outcome = resolve_dispositions(
        [(escrow.role_of(pk), d) for pk, d in escrow.votes],
        escrow.amount,
        escrow.fee,
    )
    if outcome is None:
        raise NotReady("no disposition has two distinct backers")
    _apply_outcome(balances, escrow, outcome)  # pragma: no cover - sign finalizes first
    return dict(escrow.outcome or {})


def _apply_outcome(balances: Balances, escrow: Escrow, outcome: dict) -> None:
    for role, amount in outcome["payouts"].items():
        pk = escrow.pk_of(role)
        balances[escrow.address] -= amount
        balances[pk] = balances.get(pk, 0) + amount
    escrow.status = outcome["status"]
    escrow.outcome = outcome
