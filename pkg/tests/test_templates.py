import os
import tempfile
import unittest

import jinja2

from factsim.templates import BAR_PLOT_TEMPLATE, DEFAULT_TEMPLATES_DIR, LINE_PLOT_TEMPLATE, TemplateManager


class TestTemplateManager(unittest.TestCase):
    def setUp(self):
        """Set up test environment with temporary directories."""
        self.test_dir = tempfile.TemporaryDirectory()
        self.templates_dir = os.path.join(self.test_dir.name, "templates")

    def tearDown(self):
        """Clean up the temporary directory."""
        self.test_dir.cleanup()

    def test_packaged_templates_without_directory(self):
        manager = TemplateManager()
        self.assertIsInstance(manager.get_template(LINE_PLOT_TEMPLATE), jinja2.Template)
        self.assertIsInstance(manager.get_template(BAR_PLOT_TEMPLATE), jinja2.Template)

    def test_directory_is_created_and_seeded(self):
        TemplateManager(self.templates_dir)
        for name in (LINE_PLOT_TEMPLATE, BAR_PLOT_TEMPLATE):
            path = os.path.join(self.templates_dir, name)
            self.assertTrue(os.path.exists(path))
            with open(path) as copied, open(os.path.join(DEFAULT_TEMPLATES_DIR, name)) as packaged:
                self.assertEqual(copied.read(), packaged.read())

    def test_existing_templates_are_kept(self):
        os.makedirs(self.templates_dir)
        custom = os.path.join(self.templates_dir, BAR_PLOT_TEMPLATE)
        with open(custom, "w") as f:
            f.write("<svg>{{ title }}</svg>")
        manager = TemplateManager(self.templates_dir)
        with open(custom) as f:
            self.assertEqual(f.read(), "<svg>{{ title }}</svg>")
        self.assertEqual(manager.get_template(BAR_PLOT_TEMPLATE).render(title="mine"), "<svg>mine</svg>")

    def test_missing_variable_is_an_error(self):
        manager = TemplateManager()
        with self.assertRaises(jinja2.UndefinedError):
            manager.get_template(LINE_PLOT_TEMPLATE).render(title="no frame")

    def test_unknown_template(self):
        manager = TemplateManager(self.templates_dir)
        with self.assertRaises(jinja2.TemplateNotFound):
            manager.get_template("missing.svg.j2")


if __name__ == '__main__':
    unittest.main()
