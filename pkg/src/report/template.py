import os
from datetime import datetime
from typing import Any, Mapping

from jinja2 import Environment, FileSystemLoader, StrictUndefined, select_autoescape

# Initialize Jinja2 environment
env = Environment(
    loader=FileSystemLoader(os.path.dirname(__file__)),
    autoescape=select_autoescape(disabled_extensions=("md",), default_for_string=False),
    trim_blocks=True,
    lstrip_blocks=True,
    undefined=StrictUndefined,
)


def get_report_template(report_name: str) -> str:
    """
    Load a report template's source.

    Args:
        report_name: Name of the template file (without .md extension)
    """
    try:
        source, _, _ = env.loader.get_source(env, f"{report_name}.md")
        return source
    except Exception as e:
        raise ValueError(f"Error loading template {report_name}: {e}")


def apply_report_template(report_name: str, values: Mapping[str, Any]) -> str:
    """
    Render a Markdown summary for one workflow.

    Args:
        report_name: Name of the template to use
        values: Variables referenced by the template
    """
    template_vars = {
        "CURRENT_TIME": datetime.now().strftime("%a %b %d %Y %H:%M:%S"),
        **values,
    }
    try:
        template = env.get_template(f"{report_name}.md")
        return template.render(**template_vars)
    except Exception as e:
        raise ValueError(f"Error applying template {report_name}: {e}")
