from .validation import check_actions, check_observations, check_random_state, check_xy

__all__ = ["check_actions", "check_observations", "check_random_state", "check_xy"]
