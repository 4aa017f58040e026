"""Command-line harness: verification, benchmarks, diagnostics and cost reports."""
