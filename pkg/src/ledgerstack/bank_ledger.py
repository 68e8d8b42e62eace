"""Double-entry bank ledger: prime entry books, general ledger postings,
subledger reconciliation, and financial-instrument helpers.

Seven books of prime entry feed the general ledger. The day books and the
journal sit outside the double entry system (their day totals are posted
in summary); the cash book and petty cash book are themselves part of it,
so their entries carry a double-entry-eligible flag.

All money amounts are integers in minor units. GL balances are signed,
debit-positive, so a trial balance over balanced postings sums to zero.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping, Sequence

SALES_DAY = "sales_day"
PURCHASE_DAY = "purchase_day"
SALES_RETURNS = "sales_returns"
PURCHASE_RETURNS = "purchase_returns"
CASH = "cash"
PETTY_CASH = "petty_cash"
JOURNAL = "journal"

BOOKS = (
    SALES_DAY,
    PURCHASE_DAY,
    SALES_RETURNS,
    PURCHASE_RETURNS,
    CASH,
    PETTY_CASH,
    JOURNAL,
)

# The cash and petty cash books are part of the double entry system; the
# day books and the journal are not.
DOUBLE_ENTRY_BOOKS = frozenset({CASH, PETTY_CASH})

DEBIT = "debit"
CREDIT = "credit"

ASSET = "asset"
LIABILITY = "liability"
EQUITY = "equity"
INCOME = "income"
EXPENSE = "expense"

RECEIVABLES = "receivables"
PAYABLES = "payables"


class BankLedgerError(Exception):
    pass


class UnknownBook(BankLedgerError):
    pass


class UnknownAccount(BankLedgerError):
    pass


class NonPositiveAmount(BankLedgerError):
    pass


class UnbalancedEntry(BankLedgerError):
    pass


class InvalidProbability(BankLedgerError):
    """PD/LGD outside [0, 1] or negative exposure."""


class FullyDepreciated(BankLedgerError):
    pass


class DuplicateId(BankLedgerError):
    pass


# ---------------------------------------------------------------------------
# Prime entry


@dataclass(frozen=True)
class PrimeEntry:
    book: str
    date: str
    counterparty: str
    amount: int
    memo: str = ""

    def __post_init__(self):
        if self.book not in BOOKS:
            raise UnknownBook(f"unknown book {self.book!r}")
        if not isinstance(self.amount, int) or isinstance(self.amount, bool) or self.amount <= 0:
            raise NonPositiveAmount(f"amount must be a positive integer, got {self.amount!r}")

    @property
    def double_entry_eligible(self) -> bool:
        return self.book in DOUBLE_ENTRY_BOOKS


class PrimeBooks:
    """The seven books, each an append-only list of prime entries."""

    def __init__(self):
        self._books: dict[str, list[PrimeEntry]] = {book: [] for book in BOOKS}

    def post(self, entry: PrimeEntry) -> PrimeEntry:
        self._books[entry.book].append(entry)
        return entry

    def entries(self, book: str, date: str | None = None) -> list[PrimeEntry]:
        if book not in BOOKS:
            raise UnknownBook(f"unknown book {book!r}")
        rows = self._books[book]
        if date is None:
            return list(rows)
        return [e for e in rows if e.date == date]

    def dates(self) -> list[str]:
        return sorted({e.date for rows in self._books.values() for e in rows})

    def __len__(self) -> int:
        return sum(len(rows) for rows in self._books.values())

    @classmethod
    def from_csv(cls, text: str) -> "PrimeBooks":
        """Columns: book,date,counterparty,amount[,memo]."""
        books = cls()
        reader = csv.DictReader(io.StringIO(text))
        for row in reader:
            books.post(
                PrimeEntry(
                    book=row["book"].strip(),
                    date=row["date"].strip(),
                    counterparty=row["counterparty"].strip(),
                    amount=int(row["amount"]),
                    memo=(row.get("memo") or "").strip(),
                )
            )
        return books

    @classmethod
    def from_csv_path(cls, path: str) -> "PrimeBooks":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_csv(fh.read())


# ---------------------------------------------------------------------------
# Journal entries and the general ledger


@dataclass(frozen=True)
class EntryLine:
    account: str
    side: str
    amount: int


@dataclass(frozen=True)
class JournalEntry:
    date: str
    lines: tuple[EntryLine, ...]
    memo: str = ""

    def __post_init__(self):
        if len(self.lines) < 2:
            raise UnbalancedEntry("a journal entry needs at least two lines")
        debits = credits = 0
        for line in self.lines:
            if line.side not in (DEBIT, CREDIT):
                raise UnbalancedEntry(f"unknown side {line.side!r}")
            if not isinstance(line.amount, int) or isinstance(line.amount, bool) or line.amount <= 0:
                raise NonPositiveAmount("entry line amounts must be positive integers")
            if line.side == DEBIT:
                debits += line.amount
            else:
                credits += line.amount
        if debits != credits:
            raise UnbalancedEntry(f"debits {debits} != credits {credits}")


def simple_entry(date: str, debit_account: str, credit_account: str, amount: int, memo: str = "") -> JournalEntry:
    return JournalEntry(
        date=date,
        lines=(
            EntryLine(debit_account, DEBIT, amount),
            EntryLine(credit_account, CREDIT, amount),
        ),
        memo=memo,
    )


def reverse_entry(entry: JournalEntry) -> JournalEntry:
    """Mirror of an entry: corrections are reversal plus repost, never edits."""
    return JournalEntry(
        date=entry.date,
        lines=tuple(
            EntryLine(l.account, CREDIT if l.side == DEBIT else DEBIT, l.amount)
            for l in entry.lines
        ),
        memo=f"reversal: {entry.memo}" if entry.memo else "reversal",
    )


@dataclass
class GlAccount:
    id: str
    category: str
    control_for: str = "none"
    balance: int = 0  # signed, debit positive


# Chart of accounts used by the shipped posting map and the instrument
# helpers. control_for marks the two control accounts.
CHART: Mapping[str, tuple[str, str]] = {
    "receivables_control": (ASSET, RECEIVABLES),
    "payables_control": (LIABILITY, PAYABLES),
    "sales": (INCOME, "none"),
    "sales_returns": (INCOME, "none"),
    "purchases": (EXPENSE, "none"),
    "purchase_returns": (EXPENSE, "none"),
    "cash_at_bank": (ASSET, "none"),
    "petty_cash_float": (ASSET, "none"),
    "sundry_expense": (EXPENSE, "none"),
    "accruals": (LIABILITY, "none"),
    "impairment_expense": (EXPENSE, "none"),
    "loss_allowance": (ASSET, "none"),  # contra-asset, runs a credit balance
    "depreciation_expense": (EXPENSE, "none"),
    "accumulated_depreciation": (ASSET, "none"),  # contra-asset
    "notes_payable": (LIABILITY, "none"),
    "bonds_payable": (LIABILITY, "none"),
    "common_stock": (EQUITY, "none"),
    "preferred_stock": (EQUITY, "none"),
}

# Day-total posting rule per book: (debit account, credit account,
# subledger name or None, subledger sign). The standard meanings: credit
# sales raise receivables, credit purchases raise payables, returns unwind
# them, the cash book records customer receipts into the bank account, the
# petty cash book records small cash payments out of the float, and the
# journal sweeps sundry accrual items.
POSTING_MAP: Mapping[str, tuple[str, str, str | None, int]] = {
    SALES_DAY: ("receivables_control", "sales", RECEIVABLES, +1),
    PURCHASE_DAY: ("purchases", "payables_control", PAYABLES, +1),
    SALES_RETURNS: ("sales_returns", "receivables_control", RECEIVABLES, -1),
    PURCHASE_RETURNS: ("payables_control", "purchase_returns", PAYABLES, -1),
    CASH: ("cash_at_bank", "receivables_control", RECEIVABLES, -1),
    PETTY_CASH: ("sundry_expense", "petty_cash_float", None, 0),
    JOURNAL: ("sundry_expense", "accruals", None, 0),
}


@dataclass(frozen=True)
class ReconcileResult:
    ok: bool
    control_total: int
    subledger_total: int


class GeneralLedger:
    def __init__(self):
        self.accounts: dict[str, GlAccount] = {}
        self.entries: list[JournalEntry] = []
        self.receivables: dict[str, int] = {}
        self.payables: dict[str, int] = {}

    def _account(self, account_id: str) -> GlAccount:
        if account_id not in self.accounts:
            if account_id not in CHART:
                raise UnknownAccount(f"account {account_id!r} is not in the chart")
            category, control_for = CHART[account_id]
            self.accounts[account_id] = GlAccount(account_id, category, control_for)
        return self.accounts[account_id]

    def post(self, entry: JournalEntry) -> JournalEntry:
        # Validate every account before touching any balance.
        for line in entry.lines:
            self._account(line.account)
        for line in entry.lines:
            acct = self.accounts[line.account]
            acct.balance += line.amount if line.side == DEBIT else -line.amount
        self.entries.append(entry)
        return entry

    def trial_balance(self) -> dict[str, int]:
        return {aid: acct.balance for aid, acct in sorted(self.accounts.items())}

    def reconcile_subledger(self, which: str) -> ReconcileResult:
        """Compare a control account with the sum of its subledger rows.

        Receivables run a debit balance, payables a credit balance; both
        totals are reported as positive magnitudes.
        """
        if which == RECEIVABLES:
            control = self._account("receivables_control").balance
            sub = sum(self.receivables.values())
        elif which == PAYABLES:
            control = -self._account("payables_control").balance
            sub = sum(self.payables.values())
        else:
            raise BankLedgerError(f"unknown subledger {which!r}")
        return ReconcileResult(control == sub, control, sub)


def summarize_and_post(
    books: PrimeBooks, ledger: GeneralLedger, date: str
) -> list[JournalEntry]:
    """Post each book's day total as one balanced journal entry.

    Books are processed in their declared order and counterparties in
    sorted order, so a replay over the same prime entries reproduces the
    ledger exactly. Books with no entries for the date are skipped.
    """
    posted: list[JournalEntry] = []
    for book in BOOKS:
        rows = books.entries(book, date)
        if not rows:
            continue
        total = sum(e.amount for e in rows)
        debit_acct, credit_acct, subledger, sign = POSTING_MAP[book]
        entry = simple_entry(date, debit_acct, credit_acct, total, memo=f"{book} day total")
        ledger.post(entry)
        posted.append(entry)
        if subledger:
            target = ledger.receivables if subledger == RECEIVABLES else ledger.payables
            by_cp: dict[str, int] = {}
            for e in rows:
                by_cp[e.counterparty] = by_cp.get(e.counterparty, 0) + e.amount
            for cp in sorted(by_cp):
                target[cp] = target.get(cp, 0) + sign * by_cp[cp]
    return posted


# ---------------------------------------------------------------------------
# Financial instrument classification and measurement


AMORTIZED_COST = "amortized_cost"
FVOCI = "fvoci"
FVTPL = "fvtpl"

HOLD_TO_COLLECT = "hold_to_collect"
HOLD_TO_COLLECT_AND_SELL = "hold_to_collect_and_sell"
OTHER_MODEL = "other"

BUSINESS_MODELS = (HOLD_TO_COLLECT, HOLD_TO_COLLECT_AND_SELL, OTHER_MODEL)


def classify_ifrs9(sppi_pass: bool, business_model: str) -> str:
    """Classification from the two tests.

    An instrument failing the cash-flow characteristics test lands at fair
    value through profit or loss regardless of business model. Passing it,
    hold-to-collect measures at amortized cost, hold-to-collect-and-sell
    at fair value through other comprehensive income, anything else at
    fair value through profit or loss.
    """
    if business_model not in BUSINESS_MODELS:
        raise BankLedgerError(f"unknown business model {business_model!r}")
    if not sppi_pass:
        return FVTPL
    if business_model == HOLD_TO_COLLECT:
        return AMORTIZED_COST
    if business_model == HOLD_TO_COLLECT_AND_SELL:
        return FVOCI
    return FVTPL


def _round_half_up(value: Decimal) -> int:
    return int(value.quantize(Decimal("1"), rounding=ROUND_HALF_UP))


def ecl_provision(
    exposure: int,
    pd_12m: float,
    pd_lifetime: float,
    lgd: float,
    stage: int,
) -> tuple[int, JournalEntry | None]:
    """Expected credit loss provision, rounded half-up to minor units.

    Stage 1 uses the 12-month default probability; stages 2 and 3 the
    lifetime probability. Returns the provision and the balanced entry
    (impairment expense against the loss allowance), or None when the
    provision rounds to zero.
    """
    if not 0 <= pd_12m <= 1 or not 0 <= pd_lifetime <= 1 or not 0 <= lgd <= 1:
        raise InvalidProbability("pd and lgd must lie in [0, 1]")
    if exposure < 0:
        raise InvalidProbability("exposure must be non-negative")
    if stage not in (1, 2, 3):
        raise BankLedgerError(f"stage must be 1, 2, or 3, got {stage!r}")
    pd = pd_12m if stage == 1 else pd_lifetime
    provision = _round_half_up(Decimal(exposure) * Decimal(str(pd)) * Decimal(str(lgd)))
    if provision == 0:
        return 0, None
    entry = simple_entry(
        date="",
        debit_account="impairment_expense",
        credit_account="loss_allowance",
        amount=provision,
        memo=f"ecl stage {stage}",
    )
    return provision, entry


@dataclass(frozen=True)
class FixedAsset:
    cost: int
    salvage: int
    life_periods: int
    periods_elapsed: int

    def __post_init__(self):
        if self.cost < 0 or self.salvage < 0 or self.salvage > self.cost:
            raise BankLedgerError("need 0 <= salvage <= cost")
        if self.life_periods < 1:
            raise BankLedgerError("life_periods must be at least 1")
        if self.periods_elapsed < 0:
            raise BankLedgerError("periods_elapsed must be non-negative")


def depreciate(asset: FixedAsset) -> tuple[int, JournalEntry | None]:
    """Straight-line charge for the current period.

    The regular charge is (cost - salvage) / life rounded half-up; the
    final period absorbs the remainder so the total equals cost - salvage
    exactly. Raises FullyDepreciated once every period has been taken.
    """
    if asset.periods_elapsed >= asset.life_periods:
        raise FullyDepreciated(
            f"period {asset.periods_elapsed + 1} of a {asset.life_periods}-period life"
        )
    base = asset.cost - asset.salvage
    regular = _round_half_up(Decimal(base) / Decimal(asset.life_periods))
    if asset.periods_elapsed == asset.life_periods - 1:
        amount = base - regular * (asset.life_periods - 1)
    else:
        amount = regular
    if amount == 0:
        return 0, None
    entry = simple_entry(
        date="",
        debit_account="depreciation_expense",
        credit_account="accumulated_depreciation",
        amount=amount,
        memo=f"straight-line period {asset.periods_elapsed + 1}/{asset.life_periods}",
    )
    return amount, entry


# ---------------------------------------------------------------------------
# Capital records


INSTRUMENT_KINDS = ("notes_payable", "bonds_payable", "common_stock", "preferred_stock")


@dataclass(frozen=True)
class CapitalInstrument:
    id: str
    kind: str
    holder: str
    maturity: str
    rate_bps: int  # interest/dividend rate in basis points
    original_balance: int
    current_balance: int

    def __post_init__(self):
        if self.kind not in INSTRUMENT_KINDS:
            raise BankLedgerError(f"unknown instrument kind {self.kind!r}")


class CapitalRegistry:
    """Per-instrument registry behind the capital GL accounts.

    Bookkeeping only: no pricing, no coupon scheduling.
    """

    def __init__(self):
        self._instruments: dict[str, CapitalInstrument] = {}

    def register(self, instrument: CapitalInstrument) -> CapitalInstrument:
        if instrument.id in self._instruments:
            raise DuplicateId(f"instrument {instrument.id!r} already registered")
        self._instruments[instrument.id] = instrument
        return instrument

    def get(self, instrument_id: str) -> CapitalInstrument:
        if instrument_id not in self._instruments:
            raise BankLedgerError(f"unknown instrument {instrument_id!r}")
        return self._instruments[instrument_id]

    def list(self) -> list[CapitalInstrument]:
        return [self._instruments[k] for k in sorted(self._instruments)]

    def gl_account_for(self, instrument_id: str) -> str:
        return self.get(instrument_id).kind
