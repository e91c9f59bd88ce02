from .admin import main

main()
