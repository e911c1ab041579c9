"""Tests for log level control and the exception hierarchy."""

import logging

import pytest

import dorakit as dk


class TestLogLevel:
    @pytest.mark.parametrize(
        "level", [dk.LL_NONE, dk.LL_ERROR, dk.LL_INFO, dk.LL_DEBUG, dk.LL_VERBOSE]
    )
    def test_set_get(self, level):
        dk.log_set(level)
        assert dk.log_get() == level

    def test_maps_to_logging(self):
        dk.log_set(dk.LL_DEBUG)
        assert logging.getLogger("dorakit").level == logging.DEBUG
        assert logging.getLogger("dorakit.training").isEnabledFor(logging.DEBUG)

    def test_single_handler(self):
        dk.log_set(dk.LL_INFO)
        dk.log_set(dk.LL_ERROR)
        handlers = [h for h in logging.getLogger("dorakit").handlers if getattr(h, "_dorakit", 0)]
        assert len(handlers) == 1

    def test_root_logger_untouched(self):
        root = list(logging.getLogger().handlers)
        dk.log_set(dk.LL_VERBOSE)
        assert logging.getLogger().handlers == root

    def test_unknown_level(self):
        with pytest.raises(ValueError):
            dk.log_set(42)


class TestErrors:
    @pytest.mark.parametrize(
        "cls,builtin",
        [
            (dk.SchemaError, ValueError),
            (dk.DataError, ValueError),
            (dk.ParseError, ValueError),
            (dk.ValidationError, ValueError),
            (dk.ConfigError, ValueError),
            (dk.CheckpointError, RuntimeError),
            (dk.NumericalError, ArithmeticError),
        ],
    )
    def test_hierarchy(self, cls, builtin):
        assert issubclass(cls, dk.DoraError)
        assert issubclass(cls, builtin)

    def test_parse_error_location(self):
        err = dk.ParseError("not a number", row=3, column="price")
        assert str(err) == "row 3, column 'price': not a number"
        assert (err.row, err.column) == (3, "price")

    def test_validation_error_row(self):
        assert str(dk.ValidationError("missing price", row=2)) == "row 2: missing price"

    def test_numerical_error_diagnostics(self):
        err = dk.NumericalError("non-finite loss", {"epoch": 4, "batch": 1})
        assert err.diagnostics == {"epoch": 4, "batch": 1}
        assert str(err) == "non-finite loss (epoch=4, batch=1)"
