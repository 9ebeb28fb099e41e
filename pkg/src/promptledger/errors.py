"""Exception hierarchy shared across the package.

Everything derives from :class:`PromptLedgerError` so callers can catch the
whole family.  Verification *results* are booleans or Decision objects, never
exceptions; exceptions signal misuse, malformed inputs, or broken setup.
"""

from __future__ import annotations


class PromptLedgerError(Exception):
    """Base class for all promptledger errors."""


class PatternSyntaxError(PromptLedgerError):
    """Pattern uses a metacharacter outside the supported ``*`` dialect."""


class MergeRuleConflict(PromptLedgerError):
    """Two constraint sets declare the same extension key with different merge rules."""


class EncodingOverflow(PromptLedgerError):
    """A field value is too large for the length-prefixed wire encoding."""


class KeyFormatError(PromptLedgerError):
    """Key material is malformed (wrong length or undecodable)."""


class UnknownCaller(PromptLedgerError):
    """Identity is not present in the registry; callers must fail closed."""


class RegistryError(PromptLedgerError):
    """Registry misuse, e.g. re-registering an existing id."""


class InvalidPrompt(PromptLedgerError):
    """Prompt construction violates a structural precondition (empty text)."""


class DepthExceeded(PromptLedgerError):
    """Derivation would exceed the configured depth bound."""


class LineageBroken(PromptLedgerError):
    """Parent prompt failed verification during derivation."""


class SecurityViolation(PromptLedgerError):
    """Context creation attempted without an authenticated principal."""


class PrincipalViolation(PromptLedgerError):
    """A principal attempted to update a context it does not own."""


class SignatureInvalid(PromptLedgerError):
    """A signature required for a state transition did not verify."""


class ParameterMalformed(PromptLedgerError):
    """A parameter value could not be canonicalized (bad concatenation syntax)."""


class CorpusFormatError(PromptLedgerError):
    """Attack/benign corpus file failed to parse or validate."""


class HarnessError(PromptLedgerError):
    """Scenario environment setup failed; distinct from any attack verdict."""
