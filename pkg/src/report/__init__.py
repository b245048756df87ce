from src.report.template import apply_report_template, get_report_template
from src.report.writer import read_jsonl, write_jsonl, write_summary

__all__ = ["apply_report_template", "get_report_template", "read_jsonl", "write_jsonl", "write_summary"]
