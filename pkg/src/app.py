# app.py

import streamlit as st
from views import show_scenarios, show_solve, show_experiment

# Set up basic page configuration
st.set_page_config(
    page_title="Belt-Drive Assembly Planner",
    layout="wide"  # Use full-width layout
)

# Define the available pages and corresponding view functions
PAGES = {
    "Scenarios": show_scenarios,     # Page 1: Pulley geometry, belt at ρ0 and subtask goals
    "Solve": show_solve,             # Page 2: Plan S1 + S2 and replay on the chain plant
    "Experiment": show_experiment    # Page 3: Seeded goal-sampling batch
}

# Sidebar: navigation menu
st.sidebar.title("Navigation")
selection = st.sidebar.radio("Go to", list(PAGES.keys()))  # Choose a page to view

# Main title and dispatch selected page
st.title("Belt-Drive Assembly Dashboard")
page = PAGES[selection]
page()  # Call the appropriate page function
