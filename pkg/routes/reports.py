"""
Reports API Routes
Read-only JSON over the tables a pipeline run leaves in the output directory
"""

import json
import re

import pandas as pd
from flask import Blueprint, current_app, jsonify

from services.artifact_store import MANIFEST_NAME, ArtifactStore

reports_bp = Blueprint('reports', __name__)

NAME_RE = re.compile(r'^[A-Za-z0-9_]+$')


def get_store() -> ArtifactStore:
    return ArtifactStore(current_app.config['TWEETCAST_OUTPUT_DIR'])


@reports_bp.route('/', methods=['GET'])
def list_reports():
    """Every table and JSON document in the output directory"""
    store = get_store()
    names = [n for n in store.listed_files() if n.endswith(('.csv', '.json'))]
    return jsonify({
        'reports': [n.rsplit('.', 1)[0] for n in names],
        'count': len(names),
    })


@reports_bp.route('/manifest', methods=['GET'])
def get_manifest():
    store = get_store()
    if not store.exists(MANIFEST_NAME):
        return jsonify({'error': 'No manifest; run a pipeline stage first'}), 404
    return jsonify(store.read_json(MANIFEST_NAME))


@reports_bp.route('/<name>', methods=['GET'])
def get_report(name):
    """
    One table as a list of row records, or a JSON document as-is

    NaN cells come back as null.
    """
    if not NAME_RE.match(name):
        return jsonify({'error': f'Invalid report name: {name}'}), 400
    store = get_store()
    if store.exists(f'{name}.csv'):
        try:
            frame = store.read_csv(f'{name}.csv')
        except pd.errors.EmptyDataError:
            frame = pd.DataFrame()
        return jsonify({'name': name, 'rows': json.loads(frame.to_json(orient='records'))})
    if store.exists(f'{name}.json'):
        return jsonify({'name': name, 'document': store.read_json(f'{name}.json')})
    return jsonify({'error': f'Report not found: {name}'}), 404
