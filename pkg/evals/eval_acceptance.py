
from evals.golden_data import cases
from evals.eval_functions import evaluate_cases
from utils import generate_dynamic_output_file_name, write_data_to_file
import os
import pandas as pd
import logging
logger = logging.getLogger(__name__)

if __name__ == "__main__":
    # Configure root logger for standalone script
    root_logger = logging.getLogger()
    root_logger.setLevel(logging.INFO)
    formatter = logging.Formatter('%(asctime)s - %(levelname)s - %(message)s')
    # File handler
    output_log_file = generate_dynamic_output_file_name('acceptance_eval', output_file_type="log", output_folder="./logs")
    file_handler = logging.FileHandler(output_log_file, mode='w')
    file_handler.setFormatter(formatter)
    root_logger.addHandler(file_handler)
    # Console handler
    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    logger.info(f"Evaluating {len(cases)} golden cases")
    metrics = evaluate_cases(cases)
    metrics['timestamp'] = pd.Timestamp.now()

    output_folder = "./data/output/evals/acceptance"
    logger.info(f"\n=== Acceptance results available in {output_folder} ===")
    print(metrics[["criterion", "case", "passed", "runtime_ms"]].to_string(index=False))

    output_file = generate_dynamic_output_file_name(filename="acceptance_metrics", output_file_type="csv",
                                                    output_folder=output_folder)
    write_data_to_file(metrics, output_file)

    # Accumulate to a master DataFrame for trend analysis
    master_file = os.path.join(output_folder, "master_acceptance_metrics.csv")
    if os.path.exists(master_file):
        master_df = pd.read_csv(master_file, parse_dates=["timestamp"])
        master_df = pd.concat([master_df, metrics], ignore_index=True)
    else:
        master_df = metrics.copy()
    write_data_to_file(master_df, master_file)

    failed = metrics.loc[~metrics["passed"], "case"].tolist()
    if failed:
        logger.warning(f"Failed cases: {failed}")
