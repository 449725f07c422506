"""
Tweetcast Flask Application
Hosts the pipeline CLI (`flask --app app pipeline ...`) and the read-only reports API
"""

import os

from dotenv import load_dotenv
from flask import Flask, jsonify

from services.config_service import DEFAULT_OUTPUT_DIR, ENV_PREFIX


def create_app(test_config=None):
    """Application factory"""
    load_dotenv()
    app = Flask(__name__)
    app.config['TWEETCAST_OUTPUT_DIR'] = os.getenv(f'{ENV_PREFIX}OUTPUT_DIR', DEFAULT_OUTPUT_DIR)
    if test_config:
        app.config.update(test_config)

    @app.route('/api/health')
    def health():
        """Health check endpoint for monitoring"""
        return jsonify({'status': 'healthy', 'service': 'tweetcast'})

    from routes.pipeline import pipeline_cli
    from routes.reports import reports_bp

    app.register_blueprint(reports_bp, url_prefix='/api/reports')
    app.cli.add_command(pipeline_cli)
    return app


app = create_app()

if __name__ == '__main__':
    app.run(debug=True, host='0.0.0.0', port=5000)
