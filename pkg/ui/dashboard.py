import streamlit as st
import pandas as pd
import numpy as np
import plotly.express as px
import plotly.graph_objects as go
from pathlib import Path

# --- Page Config ---
st.set_page_config(page_title="Streaming Koopman Monitor", layout="wide")
st.title("Streaming Koopman Spectrum Monitor")

data_dir = Path(st.sidebar.text_input("Output directory", "data"))
if not data_dir.is_dir():
    st.error(f"Directory {data_dir} not found. Run `python -m src.cli learn ... --spectrum-every k` first.")
    st.stop()

# --- Stability tables written by `learn --spectrum-every` ---
stability_files = sorted(data_dir.glob("*_stability.csv"))
if not stability_files:
    st.warning("No *_stability.csv found in this directory.")
else:
    selected = st.selectbox("Spectrum run", stability_files, format_func=lambda p: p.name)
    stability = pd.read_csv(selected)
    prefix = selected.name[: -len("_stability.csv")]

    latest = stability.iloc[-1]
    col1, col2, col3 = st.columns(3)
    col1.metric("Samples absorbed", int(latest["M"]))
    col2.metric("Max |eigenvalue|", f"{latest['max_modulus']:.4f}")
    col3.metric("Outside unit circle", int(latest["count_outside"]))

    fig = px.line(stability, x="M", y="max_modulus", markers=True, title="Largest eigenvalue modulus")
    fig.add_hline(y=1.0, line_dash="dash", line_color="black")
    st.plotly_chart(fig, use_container_width=True)

    # --- Eigenvalues of one snapshot ---
    snapshots = sorted(
        (int(p.stem.rsplit("_", 1)[1]), p)
        for p in data_dir.glob(f"{prefix}_*.csv")
        if p.stem.rsplit("_", 1)[1].isdigit()
    )
    if snapshots:
        M_choice = st.select_slider("Snapshot (M)", options=[m for m, _ in snapshots], value=snapshots[-1][0])
        eig = pd.read_csv(dict(snapshots)[M_choice])
        theta = np.linspace(0, 2 * np.pi, 400)
        fig = go.Figure()
        fig.add_trace(go.Scatter(x=np.cos(theta), y=np.sin(theta), mode="lines", name="unit circle",
                                 line=dict(dash="dash", color="black")))
        fig.add_trace(go.Scatter(x=eig["re"], y=eig["im"], mode="markers", name="eigenvalues",
                                 marker=dict(color=eig["modulus"], colorscale="Viridis", showscale=True)))
        fig.update_layout(title=f"Eigenvalues at M={M_choice}", xaxis_title="Re", yaxis_title="Im")
        fig.update_yaxes(scaleanchor="x", scaleratio=1)
        st.plotly_chart(fig, use_container_width=True)

        st.subheader("Export Spectrum")
        st.download_button(
            label="Download eigenvalues",
            data=eig.to_csv(index=False).encode("utf-8"),
            file_name=f"{prefix}_{M_choice}.csv",
            mime="text/csv",
        )

# --- Benchmark timings written by `bench compare` / `bench scaling` ---
st.header("Benchmarks")
bench_files = [p for p in sorted(data_dir.glob("*.csv")) if list(pd.read_csv(p, nrows=0).columns) == ["step", "method", "K", "nanos"]]
if not bench_files:
    st.info("No benchmark CSV (step,method,K,nanos) found.")
else:
    selected = st.selectbox("Benchmark file", bench_files, format_func=lambda p: p.name)
    timings = pd.read_csv(selected)
    timings["cumulative_s"] = timings.groupby(["method", "K"])["nanos"].cumsum() / 1e9
    timings["series"] = timings["method"] + " (K=" + timings["K"].astype(str) + ")"
    fig = px.line(timings, x="step", y="cumulative_s", color="series", log_x=True, log_y=True,
                  title="Cumulative learning time")
    st.plotly_chart(fig, use_container_width=True)

    per_size = timings.groupby(["method", "K"], as_index=False)["nanos"].mean()
    st.dataframe(per_size.rename(columns={"nanos": "mean_step_nanos"}))
