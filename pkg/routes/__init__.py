"""
Routes package: the pipeline CLI group and the reports API blueprint.
"""
