"""Template management for report plots."""
import logging
import os
import shutil
from typing import Optional

import jinja2

logger = logging.getLogger(__name__)

DEFAULT_TEMPLATES_DIR = os.path.join(os.path.dirname(__file__), 'default_templates')
LINE_PLOT_TEMPLATE = "line_plot.svg.j2"
BAR_PLOT_TEMPLATE = "bar_plot.svg.j2"


class TemplateManager:
    def __init__(self, template_dir: Optional[str] = None):
        """Initialize the template manager.

        Without a template directory the packaged SVG templates are used
        directly. A given directory is created if missing and seeded with
        copies of the packaged templates, which may then be edited.
        """
        self.template_dir = template_dir
        self.template_env = self._setup_templates()

    def _setup_templates(self) -> jinja2.Environment:
        """Set up Jinja2 template environment."""
        search_path = [DEFAULT_TEMPLATES_DIR]
        if self.template_dir is not None:
            os.makedirs(self.template_dir, exist_ok=True)
            self._create_default_templates(self.template_dir)
            search_path.insert(0, self.template_dir)
        return jinja2.Environment(
            loader=jinja2.FileSystemLoader(search_path),
            autoescape=jinja2.select_autoescape(enabled_extensions=("svg", "j2"), default_for_string=True),
            undefined=jinja2.StrictUndefined,
            trim_blocks=True,
            lstrip_blocks=True,
        )

    def _create_default_templates(self, template_dir: str) -> None:
        """Copy packaged templates that the directory does not override yet."""
        for name in (LINE_PLOT_TEMPLATE, BAR_PLOT_TEMPLATE):
            target = os.path.join(template_dir, name)
            if not os.path.exists(target):
                shutil.copy2(os.path.join(DEFAULT_TEMPLATES_DIR, name), target)
                logger.info(f"Copied default template {name} to {target}")

    def get_template(self, template_name: str) -> jinja2.Template:
        """Get a template by name."""
        return self.template_env.get_template(template_name)
