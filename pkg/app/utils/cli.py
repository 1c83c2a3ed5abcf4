import logging

import pandas as pd


class CLI:
    def __init__(self, debug=False):
        """Initialize the CLI interface and the root logger"""
        self.debug = debug
        logging.basicConfig(
            level=logging.DEBUG if debug else logging.WARNING,
            format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        )

    def print_header(self, text):
        """Print a header with formatting"""
        print("\n" + "=" * 60)
        print(f" {text}")
        print("=" * 60)

    def print_section(self, text):
        """Print a section header with formatting"""
        print("\n" + "-" * 40)
        print(f" {text}")
        print("-" * 40)

    def print_success(self, message):
        """Print a success message"""
        print(f"\n✅ {message}")

    def print_error(self, message):
        """Print an error message"""
        print(f"\n❌ {message}")

    def print_info(self, message):
        """Print an info message"""
        print(f"\nℹ️ {message}")

    def print_warning(self, message):
        """Print a warning message"""
        print(f"⚠️ {message}")

    def print_table(self, table: pd.DataFrame, title=None):
        """Print a result table with compact float formatting

        Args:
            table (DataFrame): Rows to show
            title (str, optional): Section title above the table
        """
        if title:
            self.print_section(title)
        if table.empty:
            print("(no rows)")
            return
        print(table.to_string(index=False, float_format=lambda value: f"{value:.4g}"))

    def print_quantities(self, quantities, title=None):
        """Print named scalar results, one per line"""
        if title:
            self.print_section(title)
        width = max((len(name) for name in quantities), default=0)
        for name, value in quantities.items():
            print(f"  {name:<{width}}  {value:.6g}")
