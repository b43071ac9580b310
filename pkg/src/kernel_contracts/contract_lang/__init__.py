"""The contract language: lexer, parser, validator and canonical form."""

from .lexer import ContractError, ContractSyntaxError, Token, lex
from .nodes import (
    BUILTIN_OP_CLASSES,
    CLAUSE_KEYWORDS,
    ContractAst,
    Matcher,
    OpClass,
    Predicate,
    Protocol,
    RefSpec,
    Relation,
    ViolationSignature,
)
from .parser import (
    PARTS,
    DuplicatePartError,
    IoError,
    MissingPartError,
    canonical_serialize,
    parse_contract,
    parse_contracts,
    parse_corpus,
    parse_file,
)
from .validate import Finding, FormatAndClassRegistry, ValidationReport, default_registry, validate

__all__ = [
    "BUILTIN_OP_CLASSES", "CLAUSE_KEYWORDS", "PARTS",
    "ContractAst", "OpClass", "Predicate", "Relation", "RefSpec", "Protocol", "Matcher",
    "ViolationSignature", "Token", "lex",
    "ContractError", "ContractSyntaxError", "MissingPartError", "DuplicatePartError", "IoError",
    "parse_contract", "parse_contracts", "parse_file", "parse_corpus", "canonical_serialize",
    "Finding", "FormatAndClassRegistry", "ValidationReport", "default_registry", "validate",
]
